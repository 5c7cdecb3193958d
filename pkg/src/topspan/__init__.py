"""Span-based parsing of TOP trees with slot-lexicon injection."""
