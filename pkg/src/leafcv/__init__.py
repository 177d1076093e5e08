"""Rice-leaf disease classification from scratch: HOG/LBP descriptors, a small
numpy CNN, Grad-CAM and metric reporting."""

__version__ = "0.1.0"
