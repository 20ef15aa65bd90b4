"""3D semantic scene-graph prediction with contrastively pretrained object features."""

__version__ = "0.1.0"
