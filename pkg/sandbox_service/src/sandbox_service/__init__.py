from .manager import ManagerConfig, PoolExhausted, SessionManager
from .app import create_app

__all__ = ["ManagerConfig", "PoolExhausted", "SessionManager", "create_app"]
