"""flimsod: flyweight salient-object detection from image markers.

Convolutional encoders are trained by clustering marker-pixel patches (no
backpropagation), decoded into saliency maps by adaptive per-image or
per-pixel weight heuristics, and refined into object masks by seeded
graph delineation.
"""

__version__ = "0.1.0"
