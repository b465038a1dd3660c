"""Score decompositions and spatial maps of independent components."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FileIOError, ParameterError
from .ica import transform

SIGMA_MODES = ("per_image", "global")
THRESHOLD_MODES = ("negative", "symmetric")


@dataclass(frozen=True)
class ContributionTable:
    """``values[k, j] = B[k, j] * s[j]``; rows plus bias give the class scores."""

    values: np.ndarray
    bias: np.ndarray
    scores: np.ndarray


def component_contributions(head, s):
    if head.input_kind != "independent_components":
        raise ParameterError("contributions need a head over independent components")
    s = np.asarray(s, dtype=np.float64).ravel()
    if s.size != head.dim:
        raise DimensionError(f"head expects {head.dim} components, got {s.size}")
    values = head.weights * s
    return ContributionTable(values=values, bias=head.bias.copy(), scores=head.weights @ s + head.bias)


def contributions_to_text(table):
    K, n = table.values.shape
    header = "%5s  %14s  %14s" % ("class", "score", "bias") + "".join(
        "  %14s" % f"ic{j}" for j in range(n)
    )
    lines = [header]
    for k in range(K):
        row = "%5d  %14.6f  %14.6f" % (k, table.scores[k], table.bias[k])
        row += "".join("  %14.6f" % v for v in table.values[k])
        lines.append(row)
    return "\n".join(lines) + "\n"


# -- spatial maps -------------------------------------------------------------


@dataclass(frozen=True)
class SpatialScoreMap:
    component: int
    grid: np.ndarray  # H x W component values
    sigma: float
    mask: np.ndarray  # H x W bool
    mode: str = "negative"


def threshold_mask(grid, sigma, mode="negative"):
    """Cells below -2 sigma (or beyond +-2 sigma in symmetric mode).

    A zero sigma (constant map) yields an empty mask.
    """
    if mode not in THRESHOLD_MODES:
        raise ParameterError(f"unknown threshold mode {mode!r}")
    if sigma <= 0:
        return np.zeros(grid.shape, dtype=bool)
    if mode == "negative":
        return grid < -2.0 * sigma
    return np.abs(grid) > 2.0 * sigma


def component_grids(model, fmap, image):
    """All n component grids of one image, shape (n, H, W)."""
    if fmap.channels != model.dim:
        raise DimensionError(f"map has {fmap.channels} channels, model expects {model.dim}")
    if not 0 <= image < fmap.images:
        raise ParameterError(f"image index {image} outside 0..{fmap.images - 1}")
    return np.moveaxis(transform(model, fmap.data[image]), -1, 0)


def global_sigma(model, fmap, component):
    """Population std of one component over every cell of every image."""
    vals = transform(model, fmap.data.reshape(-1, fmap.channels))[:, component]
    return float(vals.std())


def spatial_ic_map(model, fmap, image, component, sigma_mode="per_image", sigma=None,
                   mode="negative"):
    if not 0 <= component < model.n_components:
        raise ParameterError(f"component {component} outside 0..{model.n_components - 1}")
    if sigma_mode not in SIGMA_MODES:
        raise ParameterError(f"unknown sigma mode {sigma_mode!r}")
    grid = component_grids(model, fmap, image)[component]
    if sigma_mode == "per_image":
        sigma = float(grid.std())
    elif sigma is None:
        raise ParameterError("sigma_mode='global' needs a population sigma")
    return SpatialScoreMap(component, grid, float(sigma), threshold_mask(grid, sigma, mode), mode)


# -- receptive fields ---------------------------------------------------------


@dataclass(frozen=True)
class Layer:
    kernel: int
    stride: int = 1
    padding: int = 0
    name: str = ""


@dataclass(frozen=True)
class ReceptiveFieldSpec:
    """Per-layer receptive field size, jump and first-unit center.

    Centers are in input pixel coordinates with pixel 0 centered at 0.0;
    unit ``i`` of layer ``l`` is centered at ``start[l] + i * jump[l]``.
    """

    layers: tuple
    size: tuple
    jump: tuple
    start: tuple

    @property
    def r(self):
        return self.size[-1] if self.size else 1

    @property
    def j(self):
        return self.jump[-1] if self.jump else 1

    @property
    def center0(self):
        return self.start[-1] if self.start else 0.0


def receptive_field(arch):
    """Apply r_l = r_{l-1} + (k_l - 1) j_{l-1}, j_l = j_{l-1} s_l from r_0 = j_0 = 1."""
    layers = tuple(a if isinstance(a, Layer) else Layer(*a) for a in arch)
    r, j, start = 1, 1, 0.0
    sizes, jumps, starts = [], [], []
    for lay in layers:
        if lay.kernel < 1 or lay.stride < 1 or lay.padding < 0:
            raise ParameterError(f"invalid layer {lay}")
        start = start + ((lay.kernel - 1) / 2.0 - lay.padding) * j
        r = r + (lay.kernel - 1) * j
        j = j * lay.stride
        sizes.append(r)
        jumps.append(j)
        starts.append(start)
    return ReceptiveFieldSpec(layers, tuple(sizes), tuple(jumps), tuple(starts))


def closed_form_size(arch):
    """r_L = 1 + sum_l (k_l - 1) * prod_{p<l} stride_p."""
    total, prod = 1, 1
    for lay in arch:
        lay = lay if isinstance(lay, Layer) else Layer(*lay)
        total += (lay.kernel - 1) * prod
        prod *= lay.stride
    return total


def block_architecture(blocks=7, head=True):
    """Blocks of two 3x3/1/1 convs with 2x2/2 max-pooling between blocks.

    With ``head`` the final 2x2 convolution is appended.  ``blocks=3,
    head=False`` gives the first three blocks including the third pool.
    """
    arch = []
    for b in range(blocks):
        arch.append(Layer(3, 1, 1, f"conv{b + 1}a"))
        arch.append(Layer(3, 1, 1, f"conv{b + 1}b"))
        if b < blocks - 1 or not head:
            arch.append(Layer(2, 2, 0, f"pool{b + 1}"))
    if head:
        arch.append(Layer(2, 1, 0, "conv_head"))
    return arch


def output_size(arch, n_in):
    n = n_in
    for lay in arch:
        n = (n + 2 * lay.padding - lay.kernel) // lay.stride + 1
    return n


def input_size_for(arch, n_out):
    """Smallest input extent that yields ``n_out`` units after ``arch``."""
    n = n_out
    for lay in reversed(tuple(arch)):
        n = (n - 1) * lay.stride + lay.kernel - 2 * lay.padding
    return n


def parse_arch(text):
    """``"blocks"``, ``"blocks:B"`` (first B blocks) or ``"k:s:p,k:s:p,..."``."""
    text = text.strip()
    if text == "blocks":
        return block_architecture()
    if text.startswith("blocks:"):
        return block_architecture(int(text.split(":", 1)[1]), head=False)
    arch = []
    for tok in text.split(","):
        parts = [int(p) for p in tok.split(":")]
        if not 1 <= len(parts) <= 3:
            raise ParameterError(f"bad layer spec {tok!r}, expected kernel[:stride[:padding]]")
        arch.append(Layer(*parts))
    return arch


def project_to_input(smap, rf, input_shape):
    """Spread each masked hidden score uniformly over its receptive field.

    Rectangles are clipped at the image border and each score is divided
    by its clipped pixel count, so the total is conserved.  The result is
    scaled to [-1, 0] by the most negative value (to [-1, 1] by the largest
    magnitude in symmetric mode); an empty mask gives all zeros.
    """
    raw = accumulate_to_input(smap, rf, input_shape)
    peak = -raw.min() if smap.mode == "negative" else np.abs(raw).max()
    return raw / peak if peak > 0 else raw


def accumulate_to_input(smap, rf, input_shape):
    """Un-normalized projection (mass-conserving)."""
    H_in, W_in = input_shape
    gh, gw = smap.grid.shape
    if rf.layers and (output_size(rf.layers, H_in) != gh or output_size(rf.layers, W_in) != gw):
        raise DimensionError(
            f"grid {gh}x{gw} is not the output of the architecture on a {H_in}x{W_in} input"
        )
    if not rf.layers and (gh, gw) != (H_in, W_in):
        raise DimensionError("identity architecture needs grid shape == input shape")
    out = np.zeros((H_in, W_in))
    half = (rf.r - 1) / 2.0
    for y, x in np.argwhere(smap.mask):
        cy = rf.center0 + y * rf.j
        cx = rf.center0 + x * rf.j
        y0, y1 = int(round(cy - half)), int(round(cy + half))
        x0, x1 = int(round(cx - half)), int(round(cx + half))
        y0, x0 = max(y0, 0), max(x0, 0)
        y1, x1 = min(y1, H_in - 1), min(x1, W_in - 1)
        if y1 < y0 or x1 < x0:
            continue
        area = (y1 - y0 + 1) * (x1 - x0 + 1)
        out[y0:y1 + 1, x0:x1 + 1] += smap.grid[y, x] / area
    return out


# -- rendering ----------------------------------------------------------------


def _to_bytes(values):
    """round(255 |v|) with halves rounded up, clipped to 0..255."""
    return np.clip(np.floor(255.0 * np.abs(values) + 0.5), 0, 255).astype(np.uint8)


def encode_pgm(gray):
    gray = np.asarray(gray, dtype=np.uint8)
    h, w = gray.shape
    return b"P5\n%d %d\n255\n" % (w, h) + gray.tobytes()


def encode_ppm(rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes()


def render_heatmap(input_map, path, background=None):
    """Write a P5 PGM of ``round(255 |v|)``, or a P6 PPM over a background.

    With a background (uint8, or floats in [0, 1]) the red channel is
    saturated wherever the map is nonzero; green and blue carry the
    background.
    """
    v = np.asarray(input_map, dtype=np.float64)
    if background is None:
        payload = encode_pgm(_to_bytes(v))
    else:
        bg = np.asarray(background)
        if bg.shape != v.shape:
            raise DimensionError(f"background {bg.shape} does not match map {v.shape}")
        if bg.dtype != np.uint8:
            bg = np.clip(np.floor(255.0 * bg + 0.5), 0, 255).astype(np.uint8)
        rgb = np.stack([bg, bg, bg], axis=-1)
        rgb[v != 0, 0] = 255
        payload = encode_ppm(rgb)
    _write(path, payload)


def render_mask(mask, path):
    _write(path, encode_pgm(np.where(mask, 255, 0).astype(np.uint8)))


def read_pnm(path):
    """Minimal P5/P6 reader for files written here."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, dims, _maxval, payload = buf.split(b"\n", 3)
    w, h = (int(t) for t in dims.split())
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape(h, w) if magic == b"P5" else arr.reshape(h, w, 3)


def _write(path, payload):
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise FileIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
