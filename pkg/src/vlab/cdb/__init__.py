"""Chemical database (CDB) indexing, serving and replica selection."""

from .client import CdbClient, fetch, fetch_to_file, ping, stat
from .index import (
    MARKER,
    CdbIndex,
    CdbIndexError,
    EmptyDatabase,
    RecordOutOfRange,
    StaleIndex,
    build_index,
    check_fresh,
    index_file,
    load_index,
    lookup,
    read_index,
    write_index,
)
from .protocol import (
    BadRequest,
    CdbConnectError,
    CdbError,
    FramingError,
    NoDatabase,
    NoRecord,
    ProtocolError,
)
from .replica import ReplicaCatalogue, ReplicaError, ReplicaInfo, probe, select_replica
from .server import CdbServer, read_server_config, serve
