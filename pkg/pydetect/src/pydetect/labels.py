"""COCO class tables and id translation.

Detector toolkits disagree on COCO indexing: single-stage toolkits emit
the contiguous 0-based 80-class ids, while torchvision's detection models
emit the original sparse 1-90 ids (ten ids in that range were retired
from the dataset). The wire protocol always speaks contiguous ids, so
sparse outputs are translated before serialization.
"""
from __future__ import annotations

__all__ = ["COCO_CLASSES", "SPARSE_COCO_IDS", "SPARSE_TO_CONTIGUOUS", "class_name"]

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

#: Sparse ids in ascending order; the position of each id is its contiguous id.
SPARSE_COCO_IDS: tuple[int, ...] = (
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10,
    11, 13, 14, 15, 16, 17, 18, 19, 20, 21,
    22, 23, 24, 25, 27, 28, 31, 32, 33, 34,
    35, 36, 37, 38, 39, 40, 41, 42, 43, 44,
    46, 47, 48, 49, 50, 51, 52, 53, 54, 55,
    56, 57, 58, 59, 60, 61, 62, 63, 64, 65,
    67, 70, 72, 73, 74, 75, 76, 77, 78, 79,
    80, 81, 82, 84, 85, 86, 87, 88, 89, 90,
)

SPARSE_TO_CONTIGUOUS: dict[int, int] = {
    sparse: contiguous for contiguous, sparse in enumerate(SPARSE_COCO_IDS)
}


def class_name(label_id: int) -> str:
    """Contiguous id to class name; out-of-table ids get a synthetic name."""
    if 0 <= label_id < len(COCO_CLASSES):
        return COCO_CLASSES[label_id]
    return f"class_{label_id}"
