"""Dataset ingestion, label parsing, stratified splitting and batching.

Dataset layout: a flat directory of images named
``<age>_<gender>_<race>_<id>.<ext>``. Age in years, gender 0=male/1=female,
race code 0-4. Files whose age (or gender/race) field is missing or
malformed are skipped and counted, never fatal.
"""

import os
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

AGE_MAX = 116
AGE_CLASS_MAX = 124


class DataError(Exception):
    """Problem with dataset files or records."""


class DecodeError(DataError):
    """Image file could not be decoded."""


@dataclass(frozen=True)
class FaceRecord:
    image_path: str
    age: int
    gender: int  # 0 = male, 1 = female
    race: int


@dataclass(frozen=True)
class SkipRecord:
    image_path: str
    reason: str


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int


def parse_label(path):
    """Parse one filename into a FaceRecord, or a SkipRecord with a reason."""
    stem = os.path.splitext(os.path.basename(path))[0]
    fields = stem.split("_")
    if len(fields) < 3:
        return SkipRecord(path, "fewer than three label fields")
    age_s, gender_s, race_s = fields[0], fields[1], fields[2]
    if not age_s.isdigit():
        return SkipRecord(path, "missing or non-numeric age")
    age = int(age_s)
    if not 0 <= age <= AGE_MAX:
        return SkipRecord(path, f"age {age} out of range")
    if gender_s not in ("0", "1"):
        return SkipRecord(path, "missing or invalid gender")
    if not race_s.isdigit() or not 0 <= int(race_s) <= 4:
        return SkipRecord(path, "missing or invalid race")
    return FaceRecord(path, age, int(gender_s), int(race_s))


def scan_directory(root, extensions=(".jpg", ".jpeg", ".png", ".ppm")):
    """Scan a flat dataset directory; returns (records, skips) sorted by path."""
    if not os.path.isdir(root):
        raise DataError(f"dataset directory not found: {root}")
    records, skips = [], []
    for name in sorted(os.listdir(root)):
        if os.path.splitext(name)[1].lower() not in extensions:
            continue
        parsed = parse_label(os.path.join(root, name))
        if isinstance(parsed, FaceRecord):
            records.append(parsed)
        else:
            skips.append(parsed)
    return records, skips


def age_to_class(age):
    """25-year bucket index: 0-24 -> 0, ..., 100-124 -> 4."""
    if not 0 <= age <= AGE_CLASS_MAX:
        raise ValueError(f"age {age} outside [0, {AGE_CLASS_MAX}]")
    return age // 25


def decade_bucket(age):
    """Row index of the composition-by-age table: 0-10, 11-20, ..., 101+."""
    if age <= 10:
        return 0
    return min((age - 1) // 10, 10)

DECADE_LABELS = ["0-10", "11-20", "21-30", "31-40", "41-50", "51-60",
                 "61-70", "71-80", "81-90", "91-100", "101-116"]


def one_hot(label, k, dtype=np.float32):
    if not 0 <= label < k:
        raise ValueError(f"label {label} outside [0, {k})")
    vec = np.zeros(k, dtype=dtype)
    vec[label] = 1.0
    return Tensor(vec)


def _stratum_key(record):
    return (record.gender, decade_bucket(record.age))


def stratified_split(records, ratios=(0.8, 0.1, 0.1), seed=0):
    """Split by gender x age-decade strata, proportionally per stratum.

    Global split sizes land within one record of the exact ratios; a small
    fix-up pass moves single records between splits, always taking from the
    stratum with the largest surplus so per-stratum shares stay close.
    """
    if not records:
        raise DataError("cannot split an empty record list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    total = len(records)
    targets = [int(round(r * total)) for r in ratios[:2]]
    targets.append(total - sum(targets))

    rng = np.random.default_rng(seed)
    strata = {}
    for rec in sorted(records, key=lambda r: r.image_path):
        strata.setdefault(_stratum_key(rec), []).append(rec)

    # per-stratum largest-remainder allocation
    alloc = {}
    for key in sorted(strata):
        members = strata[key]
        rng.shuffle(members)
        n = len(members)
        quotas = [r * n for r in ratios]
        counts = [int(q) for q in quotas]
        leftovers = n - sum(counts)
        order = sorted(range(3), key=lambda i: quotas[i] - counts[i], reverse=True)
        for i in range(leftovers):
            counts[order[i % 3]] += 1
        alloc[key] = counts

    # fix global totals, one record at a time from the largest-surplus stratum
    def totals():
        return [sum(a[i] for a in alloc.values()) for i in range(3)]

    current = totals()
    guard = 0
    while current != targets and guard < 10 * total:
        guard += 1
        src = max(range(3), key=lambda i: current[i] - targets[i])
        dst = min(range(3), key=lambda i: current[i] - targets[i])
        key = max(
            (k for k in sorted(alloc) if alloc[k][src] > 0),
            key=lambda k: alloc[k][src] - ratios[src] * len(strata[k]),
        )
        alloc[key][src] -= 1
        alloc[key][dst] += 1
        current = totals()

    parts = ([], [], [])
    for key in sorted(strata):
        members = strata[key]
        a, b, _ = alloc[key]
        parts[0].extend(members[:a])
        parts[1].extend(members[a:a + b])
        parts[2].extend(members[a + b:])
    return DatasetSplit(train=parts[0], validation=parts[1], test=parts[2], seed=seed)


def save_manifest(split, path):
    with open(path, "w") as fh:
        for name, part in (("train", split.train), ("validation", split.validation),
                           ("test", split.test)):
            for rec in part:
                fh.write(f"{rec.image_path},{name}\n")


def load_manifest(path, records):
    """Rebuild a DatasetSplit from a manifest over known records."""
    by_path = {r.image_path: r for r in records}
    parts = {"train": [], "validation": [], "test": []}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec_path, part = line.rsplit(",", 1)
            except ValueError:
                raise DataError(f"{path}:{line_no}: malformed manifest line")
            if part not in parts:
                raise DataError(f"{path}:{line_no}: unknown split {part!r}")
            if rec_path not in by_path:
                raise DataError(f"{path}:{line_no}: unknown record {rec_path}")
            parts[part].append(by_path[rec_path])
    return DatasetSplit(seed=-1, **parts)


def composition_report(split):
    """Counts by gender and by age decade per split, table-style rows."""
    parts = [("Training", split.train), ("Validation", split.validation),
             ("Test", split.test)]
    gender_rows = []
    for label, gender in (("Male", 0), ("Female", 1)):
        row = [sum(1 for r in p if r.gender == gender) for _, p in parts]
        gender_rows.append((label, *row, sum(row)))
    age_rows = []
    for bucket, label in enumerate(DECADE_LABELS):
        row = [sum(1 for r in p if decade_bucket(r.age) == bucket) for _, p in parts]
        age_rows.append((label, *row, sum(row)))
    totals = [len(p) for _, p in parts]
    return {
        "by_gender": gender_rows,
        "by_age": age_rows,
        "totals": (*totals, sum(totals)),
    }


def format_composition(report):
    lines = ["Gender      Training  Validation  Test  Total"]
    for row in report["by_gender"]:
        lines.append(f"{row[0]:<10}{row[1]:>10}{row[2]:>12}{row[3]:>6}{row[4]:>7}")
    lines.append("")
    lines.append("Age Group   Training  Validation  Test  Total")
    for row in report["by_age"]:
        lines.append(f"{row[0]:<10}{row[1]:>10}{row[2]:>12}{row[3]:>6}{row[4]:>7}")
    t = report["totals"]
    lines.append(f"{'Total':<10}{t[0]:>10}{t[1]:>12}{t[2]:>6}{t[3]:>7}")
    return "\n".join(lines)


# -- image preparation --------------------------------------------------------------


def _decode_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i:i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    if len(tokens) < 4 or tokens[0] != b"P6":
        raise DecodeError(f"not a binary PPM: {path}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise DecodeError(f"unsupported PPM maxval {maxval}: {path}")
    needed = width * height * 3
    if len(data) - (i + 1) < needed:
        raise DecodeError(f"truncated PPM: {path}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=needed, offset=i + 1)
    return pixels.reshape(height, width, 3)


def decode_image(path):
    """Decode to an HxWx3 uint8 array. PPM natively; anything else via Pillow."""
    if path.lower().endswith(".ppm"):
        return _decode_ppm(path)
    try:
        from PIL import Image
    except ImportError as exc:
        raise DecodeError(f"Pillow needed to decode {path}") from exc
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except Exception as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc


def bilinear_resize(image, target_h, target_w):
    """Bilinear resample with pixel-center alignment; exact on constants."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (target_h, target_w):
        return img.copy()
    ys = (np.arange(target_h) + 0.5) * (h / target_h) - 0.5
    xs = (np.arange(target_w) + 0.5) * (w / target_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def prepare_image(path, target=180, dtype=np.float32):
    """Decode, resize to target x target and scale pixel values to [0, 1]."""
    raw = decode_image(path)
    resized = bilinear_resize(raw, target, target)
    return Tensor((resized / 255.0).astype(dtype))


# -- mini-batch generation ------------------------------------------------------------


TASKS = ("age_reg", "age_cls", "gender_cls")


def encode_targets(records, task, dtype=np.float32):
    if task == "age_reg":
        return np.array([r.age for r in records], dtype=dtype)
    if task == "age_cls":
        out = np.zeros((len(records), 5), dtype=dtype)
        for i, r in enumerate(records):
            out[i, age_to_class(r.age)] = 1.0
        return out
    if task == "gender_cls":
        return np.array([r.gender for r in records], dtype=dtype)
    raise ValueError(f"unknown task {task!r}")


def batch_iter(records, batch_size, seed, task, loader=None, target=180):
    """Yield (images, targets) batches for one epoch in seeded shuffle order.

    The final partial batch is emitted. ``loader`` maps a record to an
    image array; it defaults to decoding record.image_path.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not records:
        raise DataError("cannot batch an empty record list")
    if loader is None:
        loader = lambda rec: prepare_image(rec.image_path, target=target).data
    order = np.random.default_rng(seed).permutation(len(records))
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        images = np.stack([np.asarray(loader(rec)) for rec in chunk])
        yield Tensor(images), Tensor(encode_targets(chunk, task))
