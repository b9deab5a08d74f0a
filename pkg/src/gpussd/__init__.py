"""Discrete-event simulator of a GPU driving a multi-queue flash SSD."""

from .engine import Engine
from .errors import SimError
from .flash import FlashBackend, FlashGeometry, FlashTiming, FlashTransaction, TxnKind
from .ftl import Allocation, Ftl, GcConfig, Mapping, Scheme, plane_order
from .host import HostInterface, IoRequest, Op
from .metrics import MetricsCollector, MetricsReport

__version__ = "0.1.0"
