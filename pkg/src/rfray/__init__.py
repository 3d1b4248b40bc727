"""Differentiable RF ray tracing with learned per-surface reflection coefficients.

The toolkit couples an exact image-method specular tracer with a small
MLP that maps (incident angle, surface id) to a complex reflection
coefficient, and a phasor renderer that is differentiable end to end, so
the coefficient field can be fitted to receive-power measurements.
"""

__version__ = "0.1.0"

from .scene import Scene, Surface, TxNode, RxNode, load_scene, save_scene, one_hot
from .tracer import PathRecord, PathSet, ReflectionPoint, trace_all, trace_pair
from .reflectance import Coefficient, ReflectanceNet, net_init, net_forward
from .renderer import PaddedBatch, pad, friis_factor, ray_attenuation, channel, receive_power

__all__ = [
    "Scene", "Surface", "TxNode", "RxNode", "load_scene", "save_scene", "one_hot",
    "PathRecord", "PathSet", "ReflectionPoint", "trace_all", "trace_pair",
    "Coefficient", "ReflectanceNet", "net_init", "net_forward",
    "PaddedBatch", "pad", "friis_factor", "ray_attenuation", "channel", "receive_power",
    "__version__",
]
