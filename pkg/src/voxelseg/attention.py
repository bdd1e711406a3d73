"""Attention gating over skip connections.

Both variants score each voxel of a skip feature ``x`` against a decoder
gating signal ``g`` and multiply ``x`` by the resulting single-channel map
``alpha`` (broadcast across channels):

    alpha = sigmoid(psi(relu(Wx x + Wg g)))

``same_level`` applies every projection at the skip's own resolution, with
``g`` already upsampled to match.  ``original`` instead downsamples ``x`` with
a stride-2 Wx, gates at the coarse resolution against the pre-upsample ``g``,
and nearest-neighbour upsamples ``alpha`` back.  All three projections are
1x1x1 convolutions with biases; the intermediate width is ``max(1, C_x // 2)``.
"""

from .engine import Tensor, add, mul
from .errors import ShapeError
from .layers import conv3d, relu, sigmoid, upsample_nearest2


def intermediate_channels(c_x: int) -> int:
    return max(1, c_x // 2)


def gate_param_shapes(c_x: int, c_g: int) -> dict:
    """Shapes for one gate's parameters, keyed by short name."""
    f = intermediate_channels(c_x)
    return {
        "wx/w": (f, c_x, 1, 1, 1),
        "wx/b": (f,),
        "wg/w": (f, c_g, 1, 1, 1),
        "wg/b": (f,),
        "psi/w": (1, f, 1, 1, 1),
        "psi/b": (1,),
    }


def _check_pair(x: Tensor, g: Tensor, same_resolution: bool) -> None:
    if x.data.ndim != 5 or g.data.ndim != 5:
        raise ShapeError(f"attention gate expects rank-5 inputs, got {x.shape} and {g.shape}")
    if same_resolution:
        if x.shape[2:] != g.shape[2:]:
            raise ShapeError(
                f"same-level gate needs matching resolutions, got {x.shape} vs {g.shape}")
    else:
        want = tuple(e // 2 for e in x.shape[2:])
        if g.shape[2:] != want:
            raise ShapeError(
                f"original gate expects g at half resolution {want}, got {g.shape}")


def attention_gate_same_level(x: Tensor, g: Tensor, wx_w: Tensor, wx_b: Tensor,
                              wg_w: Tensor, wg_b: Tensor, psi_w: Tensor,
                              psi_b: Tensor):
    """Gate ``x`` by ``g`` at the skip's resolution; returns (gated, alpha)."""
    _check_pair(x, g, same_resolution=True)
    px = conv3d(x, wx_w, wx_b, stride=1, pad=0)
    pg = conv3d(g, wg_w, wg_b, stride=1, pad=0)
    a = sigmoid(conv3d(relu(add(px, pg)), psi_w, psi_b, stride=1, pad=0))
    return mul(x, a), a


def attention_gate_original(x: Tensor, g: Tensor, wx_w: Tensor, wx_b: Tensor,
                            wg_w: Tensor, wg_b: Tensor, psi_w: Tensor,
                            psi_b: Tensor):
    """Gate at the coarse resolution: stride-2 Wx on ``x``, ``g`` unchanged,
    alpha nearest-neighbour upsampled back.  Returns (gated, alpha)."""
    _check_pair(x, g, same_resolution=False)
    for e in x.shape[2:]:
        if e % 2 != 0:
            raise ShapeError(f"original gate needs even spatial extents, got {x.shape}")
    px = conv3d(x, wx_w, wx_b, stride=2, pad=0)
    pg = conv3d(g, wg_w, wg_b, stride=1, pad=0)
    a_low = sigmoid(conv3d(relu(add(px, pg)), psi_w, psi_b, stride=1, pad=0))
    a = upsample_nearest2(a_low)
    return mul(x, a), a
