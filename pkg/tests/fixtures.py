"""Shared hand-built inputs."""
from topspan import toydata
from topspan.lexicon import Lexicon

TRAFFIC_TOKENS = ("How", "is", "traffic", "heading", "to", "Dad", "'s", "house")


def traffic():
    return toydata.traffic_example()


def traffic_lexicon():
    return Lexicon({
        "SL:DESTINATION": {("dad", "'s", "house"), ("house",)},
        "SL:TYPE_RELATION": {("dad",)},
        "SL:CONTACT": {("dad",)},
        "SL:SEARCH_RADIUS": {("to",)},
    })


def display(occ):
    """1-indexed inclusive token range, e.g. ``6:8``."""
    return f"{occ.span[0] + 1}:{occ.span[1]}"
