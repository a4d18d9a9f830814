from .config import SidecarConfig, load_sidecar_config
from .export import LocalSidecarProvider, RecordingProvider, export_fixtures
from .service import SidecarService, serve

__all__ = [
    "LocalSidecarProvider",
    "RecordingProvider",
    "SidecarConfig",
    "SidecarService",
    "export_fixtures",
    "load_sidecar_config",
    "serve",
]
