"""scenescrub: train a radiance field on posed RGB images, mark an unwanted
object with a mask on one rendered view, and optimize the field so the object
disappears consistently from every view."""

__version__ = "0.1.0"
