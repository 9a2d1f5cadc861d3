"""Static COCO class-name table (80 classes, contiguous 0-based ids).

Reports label detections by these names; ingestion itself is
format-agnostic. The contiguous indexing is the one used by most
single-stage detector toolkits; servers exposing the sparse 91-id variant
must translate before answering the wire protocol.
"""
from __future__ import annotations

__all__ = ["COCO_CLASSES", "class_name", "class_id"]

COCO_CLASSES: tuple[str, ...] = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "traffic light", "fire hydrant", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard",
    "sports ball", "kite", "baseball bat", "baseball glove", "skateboard",
    "surfboard", "tennis racket", "bottle", "wine glass", "cup", "fork",
    "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
    "couch", "potted plant", "bed", "dining table", "toilet", "tv",
    "laptop", "mouse", "remote", "keyboard", "cell phone", "microwave",
    "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase",
    "scissors", "teddy bear", "hair drier", "toothbrush",
)

_BY_NAME = {name: i for i, name in enumerate(COCO_CLASSES)}


def class_name(label_id: int) -> str:
    if 0 <= label_id < len(COCO_CLASSES):
        return COCO_CLASSES[label_id]
    return f"class_{label_id}"


def class_id(name: str) -> int:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown class name {name!r}") from None
