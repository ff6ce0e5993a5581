"""COCO-17 keypoint layout and named body-part groups."""

JOINT_NAMES = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)
NUM_JOINTS = len(JOINT_NAMES)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

# two neighbours per joint, used for the per-joint limb offsets
ADJACENT = (
    (1, 2),
    (0, 3),
    (0, 4),
    (1, 5),
    (2, 6),
    (6, 7),
    (5, 8),
    (5, 9),
    (6, 10),
    (7, 5),
    (8, 6),
    (5, 13),
    (6, 14),
    (11, 15),
    (12, 16),
    (13, 11),
    (14, 12),
)

# drawing order for stick-figure rasters
LIMBS = (
    (0, 1), (0, 2), (1, 3), (2, 4),
    (5, 6), (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 11), (6, 12), (11, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
)

BODY_PARTS = {
    "head": ("nose", "left_eye", "right_eye", "left_ear", "right_ear"),
    "left_hand": ("left_wrist",),
    "right_hand": ("right_wrist",),
    "hand": ("left_wrist", "right_wrist"),
    "left_arm": ("left_shoulder", "left_elbow", "left_wrist"),
    "right_arm": ("right_shoulder", "right_elbow", "right_wrist"),
    "torso": ("left_shoulder", "right_shoulder", "left_hip", "right_hip"),
    "legs": ("left_knee", "right_knee", "left_ankle", "right_ankle"),
}


def wrist_index(side: str) -> int:
    return JOINT_INDEX[f"{side}_wrist"]


def elbow_index(side: str) -> int:
    return JOINT_INDEX[f"{side}_elbow"]


def body_part_joints(parts) -> tuple[int, ...]:
    """Sorted joint indices covered by a set of part names.

    Accepts group names from :data:`BODY_PARTS` and individual joint names.
    """
    out = set()
    for p in parts:
        if p in BODY_PARTS:
            out.update(JOINT_INDEX[j] for j in BODY_PARTS[p])
        elif p in JOINT_INDEX:
            out.add(JOINT_INDEX[p])
        else:
            raise KeyError(f"unknown body part {p!r}")
    return tuple(sorted(out))
