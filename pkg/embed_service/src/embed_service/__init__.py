"""HTTP sidecar serving 768-dimensional sentence embeddings.

POST /embed takes up to 64 texts and returns one aligned vector per text;
GET /health reports the pinned model id and readiness. The backend is
either a multilingual sentence-transformer checkpoint or a deterministic
hashed n-gram encoder with the same wire contract.
"""

__version__ = "0.1.0"
