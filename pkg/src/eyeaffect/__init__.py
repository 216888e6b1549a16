"""Eye-based continuous affect prediction pipeline.

Frame-level eye descriptors -> 292-dimensional windowed feature set ->
mutual-information feature selection interleaved with annotation
time-shifting -> BLSTM sequence regression -> CCC evaluation against a
group-of-humans baseline.
"""

__version__ = "0.1.0"

FRAME_RATE = 25
