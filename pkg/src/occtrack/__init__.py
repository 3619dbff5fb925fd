"""Multi-object tracking with occlusion."""
