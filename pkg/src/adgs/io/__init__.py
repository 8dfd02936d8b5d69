"""Scene, image, point-cloud and checkpoint formats."""
