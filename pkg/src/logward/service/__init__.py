from .core import BusyError, Service, ServiceError
from .storage import AlertRecord, IngestBatch, Storage, StorageError

__all__ = [
    "AlertRecord",
    "BusyError",
    "IngestBatch",
    "Service",
    "ServiceError",
    "Storage",
    "StorageError",
]
