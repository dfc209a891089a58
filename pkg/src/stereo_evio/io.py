"""Readers and writers for the on-disk formats.

* events: ``EVT1 <width> <height>\\n`` header followed by packed little-endian
  records ``(t: u64 µs, x: u16, y: u16, p: i8)``; CSV ``t,x,y,p`` also accepted
* IMU: CSV ``t_us,gx,gy,gz,ax,ay,az``
* trajectories: TUM ``t x y z qx qy qz qw`` with t in seconds
* images: 16-bit binary PGM for counts, little-endian PFM for float surfaces
* point clouds: ASCII PLY
* configs: plain ``key = value`` lines, ``#`` comments
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .core import EVENT_DTYPE, EventStream, Pose, US_PER_S

EVENT_MAGIC = "EVT1"


# -- events ----------------------------------------------------------------

def write_events(path, events: EventStream):
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w") as f:
            f.write(f"# width={events.width} height={events.height}\n")
            np.savetxt(f, np.column_stack([events.t, events.x, events.y, events.p]), fmt="%d",
                       delimiter=",")
        return
    with open(path, "wb") as f:
        f.write(f"{EVENT_MAGIC} {events.width} {events.height}\n".encode("ascii"))
        f.write(events.to_records().tobytes())


def read_events(path, width=None, height=None) -> EventStream:
    """Load an event file in binary or CSV form.

    CSV files carry no mandatory header, so ``width``/``height`` are taken
    from a ``# width=W height=H`` comment when present, otherwise from the
    arguments, otherwise from the coordinate extent.
    """
    path = Path(path)
    with open(path, "rb") as f:
        head = f.readline()
        if head.startswith(EVENT_MAGIC.encode()):
            parts = head.decode("ascii").split()
            if len(parts) != 3:
                raise ValueError(f"{path}: malformed event header {head!r}")
            w, h = int(parts[1]), int(parts[2])
            rec = np.frombuffer(f.read(), dtype=EVENT_DTYPE)
            return EventStream(rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], w, h)

    text = path.read_text().splitlines()
    rows = []
    for line in text:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "width":
                    width = int(val)
                elif key == "height":
                    height = int(val)
            continue
        if line[0].isalpha():
            continue  # column-name header
        rows.append(line)
    if rows:
        data = np.loadtxt(rows, delimiter=",", dtype=np.int64, ndmin=2)
    else:
        data = np.zeros((0, 4), dtype=np.int64)
    if width is None:
        width = int(data[:, 1].max()) + 1 if len(data) else 0
    if height is None:
        height = int(data[:, 2].max()) + 1 if len(data) else 0
    return EventStream(data[:, 0], data[:, 1], data[:, 2], data[:, 3], width, height)


# -- IMU -------------------------------------------------------------------

IMU_HEADER = "t_us,gx,gy,gz,ax,ay,az"


def write_imu(path, samples):
    with open(path, "w") as f:
        f.write(IMU_HEADER + "\n")
        for s in samples:
            f.write("%d,%s\n" % (s.t, ",".join("%.17g" % v for v in (*s.gyro, *s.accel))))


def read_imu(path):
    from .imu import ImuSample

    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line[0].isalpha():
            continue
        rows.append(line)
    out = []
    for line in rows:
        vals = line.split(",")
        if len(vals) != 7:
            raise ValueError(f"{path}: expected 7 IMU columns, got {len(vals)}")
        out.append(ImuSample(int(vals[0]), np.array(vals[1:4], float), np.array(vals[4:7], float)))
    for a, b in zip(out, out[1:]):
        if b.t <= a.t:
            raise ValueError(f"{path}: IMU timestamps must be strictly increasing")
    return out


# -- trajectories ----------------------------------------------------------

def write_tum(path, stamps_us, poses, mode="w"):
    with open(path, mode) as f:
        for t, pose in zip(stamps_us, poses):
            f.write(format_tum_line(t, pose))


def format_tum_line(t_us, pose: Pose):
    w, x, y, z = pose.q
    px, py, pz = pose.p
    return f"{t_us / US_PER_S:.6f} {px:.9f} {py:.9f} {pz:.9f} {x:.9f} {y:.9f} {z:.9f} {w:.9f}\n"


def read_tum(path):
    """Returns (timestamps in µs, list of Pose)."""
    stamps, poses = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        v = [float(s) for s in line.replace(",", " ").split()]
        if len(v) != 8:
            raise ValueError(f"{path}: TUM lines need 8 fields")
        stamps.append(int(round(v[0] * US_PER_S)))
        poses.append(Pose([v[7], v[4], v[5], v[6]], v[1:4]))
    return np.array(stamps, dtype=np.int64), poses


# -- images ----------------------------------------------------------------

def write_pgm16(path, counts):
    counts = np.clip(np.asarray(counts), 0, 65535).astype(">u2")
    h, w = counts.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(counts.tobytes())


def read_pgm16(path):
    with open(path, "rb") as f:
        data = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if tokens[0] != "P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data[pos:], dtype=dtype, count=w * h).reshape(h, w).astype(np.int64)


def write_pfm(path, image):
    image = np.asarray(image, dtype="<f4")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM stores rows bottom-to-top
        f.write(np.flipud(image).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind != b"Pf":
            raise ValueError("only greyscale PFM supported")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        img = np.frombuffer(f.read(), dtype=dtype, count=w * h).reshape(h, w)
    return np.flipud(img).astype(np.float32)


def write_ply(path, points, values=None):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(points)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        if values is not None:
            f.write("property float value\n")
        f.write("end_header\n")
        for i, X in enumerate(points):
            extra = f" {values[i]:.6g}" if values is not None else ""
            f.write(f"{X[0]:.6f} {X[1]:.6f} {X[2]:.6f}{extra}\n")


# -- key = value configs ---------------------------------------------------

def read_keyvalue(path):
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"{path}:{n}: empty key")
        out[key] = val
    return out


def write_keyvalue(path, mapping):
    with open(path, "w") as f:
        for key, val in mapping.items():
            if isinstance(val, (list, tuple, np.ndarray)):
                val = " ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in val)
            f.write(f"{key} = {val}\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
