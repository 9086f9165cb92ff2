from .app import ServiceConfig, build_backends, create_app
from .sessions import (
    AnnotatedCall,
    AnnotationRecord,
    BatchResult,
    NoAnnotatedTurns,
    SessionError,
    SessionFinalized,
    SessionManager,
    SessionState,
    UnknownBackend,
    UnknownSession,
    batch_annotate,
    replay_state,
)
from .store import (
    EVENT_ANNOTATION_ADDED,
    EVENT_RECORD_FINALIZED,
    EVENT_SESSION_OPENED,
    EVENT_TURN_ADDED,
    ConversationLog,
    EventStore,
    StoreCorruption,
    StoreEvent,
)
