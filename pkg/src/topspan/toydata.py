"""Synthetic navigation/event utterances in TOP bracket form.

The grammar mimics the shape of real TOP annotations: nested intents inside
slots, unary chains such as ``SL:DESTINATION -> IN:GET_LOCATION ->
SL:POINT_ON_MAP``, and slot values that collide across categories ("dad" is
both a contact and a relation, "park" is a location category and part of
"central park"). The new-value catalog holds values absent from the pools
below, so a modified test set exercises unseen values.
"""
from __future__ import annotations

import random

from .treebank import from_nested, serialize_top

POOLS = {
    "SL:TYPE_RELATION": ["mom", "dad", "sister", "brother", "aunt", "grandma", "uncle",
                         "best friend", "cousin", "grandpa", "step sister"],
    "SL:CONTACT": ["john", "mary", "sarah", "mike", "emma", "dad", "alex", "lisa", "kevin"],
    "SL:LOCATION": ["downtown", "midtown", "oakland", "the city", "central park", "main street",
                    "the mall", "san jose", "union square", "palo alto", "the bay area",
                    "new york city"],
    "SL:POINT_ON_MAP": ["the golden gate bridge", "union station", "the airport", "pier 39",
                        "city hall", "the stadium", "Golden Gate Park", "the museum",
                        "Times Square", "Lake Tahoe", "Yosemite", "the Space Needle"],
    "SL:PATH": ["bridge", "the highway", "i - 80", "the tunnel", "highway 101", "route 1",
                "the freeway"],
    "SL:DESTINATION": ["home", "work", "the office", "school"],
    "SL:SEARCH_RADIUS": ["near", "around", "close to"],
    "SL:DATE_TIME": ["tonight", "tomorrow", "this weekend", "at 5 pm", "on friday",
                     "this morning", "right now", "next week"],
    "SL:METHOD_TRAVEL": ["drive", "walk", "bike", "take the bus", "take the train"],
    "SL:CATEGORY_EVENT": ["concerts", "festivals", "parties", "games", "shows", "fireworks"],
    "SL:CATEGORY_LOCATION": ["park", "gas station", "coffee shop", "restaurant", "parking lot"],
    "SL:LOCATION_MODIFIER": ["nearest", "closest"],
    "SL:ROAD_CONDITION": ["construction", "accidents", "road closures", "delays"],
}

# New values per category, as listed for the modified test set.
CATALOG = {
    "SL:TYPE_RELATION": ["brother in law", "roommate", "homie", "stepfather", "boy friend"],
    "SL:LOCATION": ["beach park", "school building", "street - 25", "bridge", "rocket company"],
    "SL:POINT_ON_MAP": ["Silicon Valley", "Red Rock Canyon", "White House",
                        "Ahaggar National Park", "Singapore"],
}


class Grammar:
    def __init__(self, seed):
        self.rng = random.Random(seed)

    def pick(self, xs):
        return self.rng.choice(xs)

    def chance(self, p):
        return self.rng.random() < p

    def slot(self, cat):
        return (cat, self.pick(POOLS[cat]).split())

    def date(self):
        return [self.slot("SL:DATE_TIME")] if self.chance(0.4) else []

    def place(self):
        """Content of a DESTINATION/SOURCE slot."""
        r = self.rng.random()
        if r < 0.35:
            if self.chance(0.2):
                rel = [("SL:TYPE_RELATION", [self.pick(["Dad", "Mom"])])]
            elif self.chance(0.25):
                rel = [self.slot("SL:CONTACT")]
            else:
                rel = ["my", self.slot("SL:TYPE_RELATION")]
            return [("IN:GET_LOCATION_HOME", rel + ["'s", self.pick(["house", "place"])])]
        if r < 0.7:
            return [("IN:GET_LOCATION", [self.slot("SL:POINT_ON_MAP")])]
        if r < 0.85:
            return [("IN:GET_LOCATION", ["the", self.slot("SL:LOCATION_MODIFIER"),
                                          self.slot("SL:CATEGORY_LOCATION")])]
        return self.pick(POOLS["SL:DESTINATION"]).split()

    def location(self):
        if self.chance(0.3):
            return ("SL:LOCATION", [("IN:GET_LOCATION", [self.slot("SL:POINT_ON_MAP")])])
        return self.slot("SL:LOCATION")

    def utterance(self):
        k = self.rng.randrange(11)
        dest = ("SL:DESTINATION", self.place())
        if k == 0:
            body = ("IN:GET_INFO_TRAFFIC", ["how", "is", "traffic", "heading", "to", dest] + self.date())
        elif k == 1:
            body = ("IN:GET_INFO_TRAFFIC", ["is", "there", "traffic", "in", self.location()] + self.date())
        elif k == 2:
            body = ("IN:GET_INFO_TRAFFIC", ["any", self.slot("SL:ROAD_CONDITION"), "on",
                                            self.slot("SL:PATH")] + self.date())
        elif k == 3:
            body = ("IN:GET_ESTIMATED_DURATION", ["how", "long", "to", self.slot("SL:METHOD_TRAVEL"),
                                                  "to", dest] + self.date())
        elif k == 4:
            src = ("SL:SOURCE", self.place())
            body = ("IN:GET_ESTIMATED_DURATION", ["how", "long", "will", "it", "take", "to", "get",
                                                  "from", src, "to", dest])
        elif k == 5:
            via = ["via", self.slot("SL:PATH")] if self.chance(0.5) else []
            body = ("IN:GET_DIRECTIONS", ["directions", "to", dest] + via)
        elif k == 6:
            body = ("IN:GET_EVENT", ["any", self.slot("SL:CATEGORY_EVENT"), "in",
                                     self.location()] + self.date())
        elif k == 7:
            body = ("IN:GET_EVENT", ["what", self.slot("SL:CATEGORY_EVENT"), "are", "happening",
                                     self.slot("SL:SEARCH_RADIUS"), self.location()])
        elif k == 8:
            body = ("IN:GET_ESTIMATED_ARRIVAL", ["when", "will", self.slot("SL:CONTACT"), "get",
                                                 "to", dest])
        elif k == 9:
            src = ("SL:SOURCE", self.place())
            body = ("IN:GET_DISTANCE", ["how", "far", "is", dest, "from", src])
        else:
            body = ("IN:GET_LOCATION", ["where", "is", "the", self.slot("SL:LOCATION_MODIFIER"),
                                        self.slot("SL:CATEGORY_LOCATION"),
                                        self.slot("SL:SEARCH_RADIUS"), self.location()])
        return from_nested(body)


def generate(n, seed):
    """``n`` random ``(tree, utterance)`` pairs."""
    g = Grammar(seed)
    return [g.utterance() for _ in range(n)]


def traffic_example():
    return from_nested(("IN:GET_INFO_TRAFFIC", [
        "How", "is", "traffic", "heading", "to",
        ("SL:DESTINATION", [("IN:GET_LOCATION_HOME", [("SL:TYPE_RELATION", ["Dad"]), "'s", "house"])]),
    ]))


def write_toy_corpus(out_dir, n_train=400, n_dev=100, n_test=300, seed=0):
    import os
    os.makedirs(out_dir, exist_ok=True)
    splits = {"train": generate(n_train, seed), "dev": generate(n_dev, seed + 1),
              "test": generate(n_test, seed + 2)}
    paths = {}
    for name, corpus in splits.items():
        path = os.path.join(out_dir, f"{name}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            for tree, utt in corpus:
                fh.write(serialize_top(tree, utt) + "\n")
        paths[name] = path
    path = os.path.join(out_dir, "catalog.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        for cat, vals in CATALOG.items():
            for v in vals:
                fh.write(f"{cat}\t{v}\n")
    paths["catalog"] = path
    return paths
