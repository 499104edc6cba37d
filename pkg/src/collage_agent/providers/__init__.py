from .base import (
    ChatProvider,
    ChatRequest,
    EmbeddingProvider,
    EmbeddingVector,
    GeneratedImage,
    ImageGenRequest,
    ImageProvider,
    encode_png,
    image_digest,
)
from .live import LiveChat, LiveEmbedder, LiveImageGenerator, credential
from .mock import (
    CannedChat,
    ContentScoringMockChat,
    MockChat,
    MockEmbedder,
    MockImageGenerator,
    ScriptedChat,
)
from .retry import RetryPolicy
