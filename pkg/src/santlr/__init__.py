"""Speech annotation toolkit: corpus ingestion, utterance ranking, and a
self-hosted annotation service for low-resource language collection."""

__version__ = "0.1.0"
