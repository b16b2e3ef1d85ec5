"""SemanticKITTI label taxonomy: ids, names, groupings, render colors."""

from __future__ import annotations

__all__ = [
    "CLASS_NAMES",
    "GROUND_CLASSES",
    "THING_CLASSES",
    "DEFAULT_INJECTION_CLASSES",
    "CLASS_COLORS",
    "class_name",
]

CLASS_NAMES = {
    0: "unlabeled",
    1: "outlier",
    10: "car",
    11: "bicycle",
    13: "bus",
    15: "motorcycle",
    16: "on-rails",
    18: "truck",
    20: "other-vehicle",
    30: "person",
    31: "bicyclist",
    32: "motorcyclist",
    40: "road",
    44: "parking",
    48: "sidewalk",
    49: "other-ground",
    50: "building",
    51: "fence",
    52: "other-structure",
    60: "lane-marking",
    70: "vegetation",
    71: "trunk",
    72: "terrain",
    80: "pole",
    81: "traffic-sign",
    99: "other-object",
    252: "moving-car",
    253: "moving-bicyclist",
    254: "moving-person",
    255: "moving-motorcyclist",
    256: "moving-on-rails",
    257: "moving-bus",
    258: "moving-truck",
    259: "moving-other-vehicle",
}

# Surface classes that must never be carved into object instances.
GROUND_CLASSES = frozenset({40, 44, 48, 49, 72})

# Countable object categories that carry instance ids; only these are
# extractable and injectable.
THING_CLASSES = frozenset(
    {10, 11, 13, 15, 16, 18, 20, 30, 31, 32, 252, 253, 254, 255, 256, 257, 258, 259}
)

# Rare classes targeted by the balancing injection policy.
DEFAULT_INJECTION_CLASSES = (11, 15, 18, 20, 30, 31, 32)

# RGB render colors, following the common SemanticKITTI visualisation palette.
CLASS_COLORS = {
    0: (0, 0, 0),
    1: (255, 0, 0),
    10: (100, 150, 245),
    11: (100, 230, 245),
    13: (100, 80, 250),
    15: (30, 60, 150),
    16: (0, 0, 255),
    18: (80, 30, 180),
    20: (0, 0, 255),
    30: (255, 30, 30),
    31: (255, 40, 200),
    32: (150, 30, 90),
    40: (255, 0, 255),
    44: (255, 150, 255),
    48: (75, 0, 75),
    49: (175, 0, 75),
    50: (255, 200, 0),
    51: (255, 120, 50),
    52: (255, 150, 0),
    60: (150, 255, 170),
    70: (0, 175, 0),
    71: (135, 60, 0),
    72: (150, 240, 80),
    80: (255, 240, 150),
    81: (255, 0, 0),
    99: (50, 255, 255),
    252: (100, 150, 245),
    253: (255, 40, 200),
    254: (255, 30, 30),
    255: (150, 30, 90),
    256: (0, 0, 255),
    257: (100, 80, 250),
    258: (80, 30, 180),
    259: (0, 0, 255),
}


def class_name(class_id: int) -> str:
    return CLASS_NAMES.get(class_id, f"class-{class_id}")
