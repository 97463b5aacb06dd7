"""16-bit radiograph to 8-bit grayscale conversion by window center/width."""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np
from PIL import Image

from .errors import InvalidWindowError, MissingWindowError, UnsupportedDicomError

EXPLICIT_VR_LITTLE_ENDIAN = "1.2.840.10008.1.2.1"


@dataclass(frozen=True)
class WindowParams:
    wc: float
    ww: float

    def __post_init__(self):
        if not (self.ww > 0) or not math.isfinite(self.ww) or not math.isfinite(self.wc):
            raise InvalidWindowError(f"window width must be a finite value > 0, got {self.ww}")


@dataclass
class RawImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint16
    monochrome_inverted: bool = False

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint16).reshape(self.height, self.width)


@dataclass
class GrayImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8


def _check(wp):
    if not isinstance(wp, WindowParams):
        wp = WindowParams(*wp)
    return wp


def map_window(pv, wp: WindowParams) -> np.ndarray:
    """Vectorized window mapping, rounding half up after the linear segment."""
    wp = _check(wp)
    pv = np.asarray(pv, dtype=np.float64)
    lo = wp.wc - wp.ww / 2.0
    hi = wp.wc + wp.ww / 2.0
    linear = np.floor(255.0 * (pv - lo) / wp.ww + 0.5)
    out = np.where(pv < lo, 0.0, np.where(pv > hi, 255.0, linear))
    return np.clip(out, 0, 255).astype(np.uint8)


def map_pixel(pv, wp: WindowParams) -> int:
    return int(map_window(pv, wp))


def apply_window(img: RawImage, wp: WindowParams) -> GrayImage:
    out = map_window(img.pixels, wp)
    if img.monochrome_inverted:
        out = (255 - out).astype(np.uint8)
    return GrayImage(img.width, img.height, out)


def select_window(params: List[WindowParams]) -> WindowParams:
    """Multiple window presets: the first one wins."""
    if not params:
        raise MissingWindowError("no window center/width pairs available")
    return params[0]


def _multi(value) -> List[float]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)) or type(value).__name__ == "MultiValue":
        return [float(v) for v in value]
    if isinstance(value, str):
        return [float(v) for v in value.split("\\") if v.strip()]
    return [float(value)]


def read_dicom_subset(path) -> Tuple[RawImage, List[WindowParams], str]:
    """Read an uncompressed explicit-VR little-endian monochrome DICOM file.

    Returns the pixel matrix, every window pair in file order, and the view position
    (e.g. ``"PA"``, ``"LL"``; empty when absent).
    """
    import pydicom
    from pydicom.errors import InvalidDicomError

    path = Path(path)
    try:
        ds = pydicom.dcmread(path)
    except (InvalidDicomError, EOFError, OSError) as exc:
        raise UnsupportedDicomError(f"{path}: cannot parse DICOM ({exc})") from None

    ts = str(getattr(ds.file_meta, "TransferSyntaxUID", "")) if hasattr(ds, "file_meta") else ""
    if ts != EXPLICIT_VR_LITTLE_ENDIAN:
        raise UnsupportedDicomError(f"{path}: TransferSyntaxUID (0002,0010) {ts or 'missing'} unsupported")
    if "PixelData" not in ds:
        raise UnsupportedDicomError(f"{path}: missing PixelData (7FE0,0010)")
    photometric = str(ds.get("PhotometricInterpretation", ""))
    if photometric not in ("MONOCHROME1", "MONOCHROME2"):
        raise UnsupportedDicomError(f"{path}: PhotometricInterpretation (0028,0004) {photometric or 'missing'} unsupported")
    if int(ds.get("SamplesPerPixel", 1)) != 1:
        raise UnsupportedDicomError(f"{path}: SamplesPerPixel (0028,0002) must be 1")
    if int(ds.get("BitsAllocated", 0)) != 16:
        raise UnsupportedDicomError(f"{path}: BitsAllocated (0028,0100) must be 16")
    if int(ds.get("PixelRepresentation", 0)) != 0:
        raise UnsupportedDicomError(f"{path}: signed PixelRepresentation (0028,0103) unsupported")
    if int(ds.get("NumberOfFrames", 1) or 1) != 1:
        raise UnsupportedDicomError(f"{path}: multi-frame NumberOfFrames (0028,0008) unsupported")
    slope = float(ds.get("RescaleSlope", 1) or 1)
    intercept = float(ds.get("RescaleIntercept", 0) or 0)
    if slope != 1.0 or intercept != 0.0:
        raise UnsupportedDicomError(
            f"{path}: non-identity RescaleSlope/RescaleIntercept (0028,1053/1052) unsupported")

    centers = _multi(ds.get("WindowCenter"))
    widths = _multi(ds.get("WindowWidth"))
    if not centers:
        raise UnsupportedDicomError(f"{path}: missing WindowCenter (0028,1050)")
    if not widths:
        raise UnsupportedDicomError(f"{path}: missing WindowWidth (0028,1051)")
    if len(centers) != len(widths):
        raise UnsupportedDicomError(f"{path}: WindowCenter/WindowWidth value counts differ")
    try:
        windows = [WindowParams(c, w) for c, w in zip(centers, widths)]
    except InvalidWindowError as exc:
        raise UnsupportedDicomError(f"{path}: WindowWidth (0028,1051) invalid: {exc}") from None

    rows, cols = int(ds.Rows), int(ds.Columns)
    raw = np.frombuffer(ds.PixelData, dtype="<u2")
    if raw.size < rows * cols:
        raise UnsupportedDicomError(f"{path}: PixelData (7FE0,0010) shorter than Rows x Columns")
    img = RawImage(cols, rows, raw[: rows * cols].copy(), photometric == "MONOCHROME1")
    view = str(ds.get("ViewPosition", "") or "").strip().upper()
    return img, windows, view


def read_raw_pair(raw_path, sidecar_path=None) -> Tuple[RawImage, List[WindowParams], str]:
    """Fixture input: little-endian uint16 pixel file plus a JSON sidecar.

    Sidecar keys: width, height, wc, ww (number or list), optional inverted and view.
    """
    raw_path = Path(raw_path)
    sidecar_path = Path(sidecar_path) if sidecar_path else raw_path.with_suffix(".json")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    w, h = int(meta["width"]), int(meta["height"])
    data = np.frombuffer(raw_path.read_bytes(), dtype="<u2")
    if data.size != w * h:
        raise UnsupportedDicomError(f"{raw_path}: expected {w * h} samples, found {data.size}")
    wcs, wws = _multi(meta.get("wc")), _multi(meta.get("ww"))
    if not wcs or len(wcs) != len(wws):
        raise UnsupportedDicomError(f"{sidecar_path}: wc/ww missing or mismatched")
    windows = [WindowParams(c, v) for c, v in zip(wcs, wws)]
    return RawImage(w, h, data.copy(), bool(meta.get("inverted", False))), windows, str(meta.get("view", ""))


def read_any(path):
    path = Path(path)
    if path.suffix.lower() in (".raw", ".bin"):
        return read_raw_pair(path)
    return read_dicom_subset(path)


def write_png_gray8(img: GrayImage, path) -> None:
    arr = np.ascontiguousarray(img.pixels, dtype=np.uint8).reshape(img.height, img.width)
    Image.fromarray(arr, mode="L").save(Path(path), format="PNG")


def read_png_gray8(path) -> GrayImage:
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
        arr = np.array(im, dtype=np.uint8)
    return GrayImage(arr.shape[1], arr.shape[0], arr)


def convert(in_path, out_path, wp: WindowParams = None) -> Tuple[WindowParams, str]:
    """Read, window (explicit params or the file's first pair) and write a PNG."""
    img, windows, view = read_any(in_path)
    chosen = wp if wp is not None else select_window(windows)
    write_png_gray8(apply_window(img, chosen), out_path)
    return chosen, view
