"""File formats: Middlebury ``.flo``, binary PNM, flow colouring, CSV reports, run configs."""

from __future__ import annotations

import colorsys
import configparser
import csv
import hashlib
import io
import os
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .consistency import BgcParams
from .estimator import EstimatorParams
from .grid import FrameGrid, MotionField, ValidityMask
from .noise import NoiseModel
from .synth import SHIPPED_SCENES, SceneSpec, Sprite

FLO_SENTINEL = 202021.25
FLO_HEADER = struct.Struct("<fii")


class FormatError(ValueError):
    """Malformed input file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# --------------------------------------------------------------------------
# .flo


def encode_flo(flow: MotionField) -> bytes:
    uv = np.stack([flow.u, flow.v], axis=-1).astype("<f4")
    return FLO_HEADER.pack(FLO_SENTINEL, flow.width, flow.height) + uv.tobytes()


def decode_flo(data: bytes, direction="forward", src_frame: int = 0, dst_frame: int = 1) -> MotionField:
    if len(data) < FLO_HEADER.size:
        raise FormatError("truncated .flo header", len(data))
    sentinel, w, h = FLO_HEADER.unpack_from(data)
    if sentinel != np.float32(FLO_SENTINEL):
        raise FormatError(f"bad .flo sentinel {sentinel!r}", 0)
    if w <= 0:
        raise FormatError(f"non-positive width {w}", 4)
    if h <= 0:
        raise FormatError(f"non-positive height {h}", 8)
    need = FLO_HEADER.size + 8 * w * h
    if len(data) < need:
        raise FormatError(f"truncated .flo payload, expected {need} bytes", len(data))
    if len(data) > need:
        raise FormatError("trailing bytes after .flo payload", need)
    uv = np.frombuffer(data, "<f4", count=2 * w * h, offset=FLO_HEADER.size).reshape(h, w, 2)
    if not np.all(np.isfinite(uv)):
        bad = int(np.argmax(~np.isfinite(uv.ravel())))
        raise FormatError("non-finite flow value", FLO_HEADER.size + 4 * bad)
    return MotionField(uv[..., 0], uv[..., 1], direction, src_frame, dst_frame)


def write_flo(path, flow: MotionField) -> None:
    Path(path).write_bytes(encode_flo(flow))


def read_flo(path, direction="forward", src_frame: int = 0, dst_frame: int = 1) -> MotionField:
    return decode_flo(Path(path).read_bytes(), direction, src_frame, dst_frame)


# --------------------------------------------------------------------------
# PNM


def encode_pnm(image: FrameGrid | ValidityMask) -> bytes:
    """P5 for one channel or a mask, P6 for three channels; maxval 255."""
    if isinstance(image, ValidityMask):
        pix = image.bits.astype(np.uint8) * 255
        magic, (h, w) = b"P5", image.shape
    else:
        if image.channels not in (1, 3):
            raise ValueError(f"PNM stores 1 or 3 channels, got {image.channels}")
        pix = np.rint(image.data.astype(np.float64) * 255.0).astype(np.uint8)
        magic, h, w = (b"P5" if image.channels == 1 else b"P6"), image.height, image.width
    return magic + b"\n%d %d\n255\n" % (w, h) + pix.tobytes()


def _header_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers after the magic, skipping comments."""
    pos, out = 2, []
    while len(out) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed PNM header", start)
        out.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after PNM header", pos)
    return out, pos + 1


def decode_pnm(data: bytes) -> FrameGrid:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}", 0)
    (w, h, maxval), pos = _header_tokens(data, 3)
    if w <= 0 or h <= 0:
        raise FormatError("non-positive PNM dimensions", 2)
    if not 0 < maxval < 256:
        raise FormatError(f"unsupported maxval {maxval}", pos - 1)
    c = 1 if magic == b"P5" else 3
    need = pos + w * h * c
    if len(data) < need:
        raise FormatError(f"truncated PNM payload, expected {need} bytes", len(data))
    pix = np.frombuffer(data, np.uint8, count=w * h * c, offset=pos).reshape(h, w, c)
    return FrameGrid(pix.astype(np.float64) / maxval)


def write_pnm(path, image: FrameGrid | ValidityMask) -> None:
    Path(path).write_bytes(encode_pnm(image))


def read_pnm(path) -> FrameGrid:
    return decode_pnm(Path(path).read_bytes())


def read_mask(path) -> ValidityMask:
    grid = read_pnm(path)
    if grid.channels != 1:
        raise FormatError("a mask must be a single-channel PGM", 0)
    return ValidityMask(grid.data[:, :, 0] >= 0.5)


# --------------------------------------------------------------------------
# visualisation

_hsv_to_rgb = np.frompyfunc(colorsys.hsv_to_rgb, 3, 3)


def flow_to_color(flow: MotionField, max_magnitude: float | None = None) -> FrameGrid:
    """RGB image: hue follows the flow angle, saturation its clamped relative magnitude.

    Value is fixed at 1, so zero motion is white. ``max_magnitude`` defaults
    to the largest magnitude in the field (or 1 for an all-zero field).
    """
    mag = flow.magnitude()
    if max_magnitude is None:
        max_magnitude = float(mag.max()) or 1.0
    if not max_magnitude > 0:
        raise ValueError("max_magnitude must be positive")
    hue = np.mod(np.arctan2(flow.v.astype(np.float64), flow.u.astype(np.float64)) / (2 * np.pi), 1.0)
    sat = np.minimum(mag / max_magnitude, 1.0)
    rgb = _hsv_to_rgb(hue, sat, np.ones_like(hue))
    return FrameGrid(np.stack([np.asarray(ch, np.float64) for ch in rgb], axis=-1))


# --------------------------------------------------------------------------
# CSV reports


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def format_csv(columns, rows, config_text: str, seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"# config_sha256={config_hash(config_text)} seed={seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows, config_text: str, seed: int) -> None:
    Path(path).write_text(format_csv(columns, rows, config_text, seed), encoding="utf-8")


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    """Comment line, header and rows of a report written by :func:`write_csv`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise FormatError("missing comment row", 0)
    parsed = list(csv.reader(lines[1:]))
    return lines[0], parsed[0], parsed[1:]


# --------------------------------------------------------------------------
# run configuration


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_SPRITE_FLOAT_PAIRS = ("center", "size", "velocity", "tone")


def scene_to_text(spec: SceneSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    _scene_into(cp, spec)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _scene_into(cp: configparser.ConfigParser, spec: SceneSpec) -> None:
    cp["scene"] = {
        "width": str(spec.width),
        "height": str(spec.height),
        "background_seed": str(spec.background_seed),
        "channels": str(spec.channels),
        "texture_scale": _fmt(float(spec.texture_scale)),
        "background_tone": _fmt(spec.background_tone),
    }
    for k, s in enumerate(spec.sprites):
        cp[f"sprite.{k}"] = {f.name: _fmt(getattr(s, f.name)) for f in fields(Sprite)}


def _scene_from(cp: configparser.ConfigParser) -> SceneSpec | None:
    if not cp.has_section("scene"):
        return None
    sec = cp["scene"]
    if "preset" in sec:
        name = sec["preset"]
        if name not in SHIPPED_SCENES:
            raise ValueError(f"unknown scene preset {name!r}; choose from {sorted(SHIPPED_SCENES)}")
        return SHIPPED_SCENES[name]()
    sprites = []
    names = sorted((s for s in cp.sections() if s.startswith("sprite.")), key=lambda s: int(s[7:]))
    for name in names:
        sp = cp[name]
        kw = {}
        for key, val in sp.items():
            if key in _SPRITE_FLOAT_PAIRS:
                kw[key] = _floats(val)
            elif key in ("omega", "angle"):
                kw[key] = float(val)
            elif key in ("depth", "texture_seed"):
                kw[key] = int(val)
            elif key == "shape":
                kw[key] = val
            else:
                raise ValueError(f"unknown sprite key {key!r} in [{name}]")
        sprites.append(Sprite(**kw))
    return SceneSpec(
        width=sec.getint("width", 64),
        height=sec.getint("height", 64),
        background_seed=sec.getint("background_seed", 0),
        sprites=tuple(sprites),
        channels=sec.getint("channels", 1),
        texture_scale=sec.getfloat("texture_scale", 4.0),
        background_tone=_floats(sec.get("background_tone", "0.0, 0.5")),
    )


def scene_from_text(text: str) -> SceneSpec:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    spec = _scene_from(cp)
    if spec is None:
        raise ValueError("no [scene] section")
    return spec


def _typed_section(cp, name: str, cls, default):
    if not cp.has_section(name):
        return default
    kw = {}
    types = {f.name: type(getattr(default, f.name)) for f in fields(cls)}
    for key, val in cp[name].items():
        if key not in types:
            raise ValueError(f"unknown key {key!r} in [{name}]")
        t = types[key]
        if t is bool:
            kw[key] = cp[name].getboolean(key)
        elif t is type(None):
            kw[key] = None if val.lower() in ("", "none") else float(val)
        else:
            kw[key] = t(val)
    return replace(default, **kw)


@dataclass(frozen=True)
class RunConfig:
    """Every knob of an experiment; serialised as an INI-style text file."""

    scene: SceneSpec = field(default_factory=SHIPPED_SCENES["translating_rectangle"])
    estimator: EstimatorParams = EstimatorParams()
    bgc: BgcParams = BgcParams()
    noise: NoiseModel = NoiseModel()
    horizon: int = 100
    output_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError(f"horizon must be >= 2, got {self.horizon}")

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["run"] = {"horizon": str(self.horizon), "output_dir": self.output_dir,
                     "seed": str(self.seed)}
        _scene_into(cp, self.scene)
        for name, obj in (("estimator", self.estimator), ("bgc", self.bgc), ("noise", self.noise)):
            cp[name] = {k: _fmt(v) for k, v in asdict(obj).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ValueError(f"bad config: {exc}") from None
        base = cls()
        run = cp["run"] if cp.has_section("run") else {}
        return cls(
            scene=_scene_from(cp) or base.scene,
            estimator=_typed_section(cp, "estimator", EstimatorParams, base.estimator),
            bgc=_typed_section(cp, "bgc", BgcParams, base.bgc),
            noise=_typed_section(cp, "noise", NoiseModel, base.noise),
            horizon=int(run.get("horizon", base.horizon)),
            output_dir=run.get("output_dir", base.output_dir),
            seed=int(run.get("seed", base.seed)),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def remove_quietly(paths) -> None:
    for p in reversed(list(paths)):
        try:
            if os.path.isdir(p):
                os.rmdir(p)
            else:
                os.remove(p)
        except OSError:
            pass
