"""groundkit: single-stage visual grounding for desk-scale HRI.

Localizes the object a natural-language phrase refers to, trained end to end
on synthetic desk scenes, served over a framed TCP protocol and an HTTP
gateway with RGB-D point-cloud extraction.
"""

from ._accel import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
