"""Serializable bundle of every net used by the sampling pipeline.

The bundle pins the structural defaults: a (16, 16, 32) relu block
encoder over ``c + 6`` input channels, a single-radius (4.0 m, max 16)
first diffusion stage, a sigmoid confidence head, a (16, 3) centroid
offset head over ``3 + c1`` inputs, and a two-radius (0.2 / 0.8 m, max 16)
second diffusion stage over selected centers.

Weights serialize to a single JSON document; each layer is stored as
``{"w": row-major values, "rows", "cols", "b", "act"}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .lfdbf import DEFAULT_ALPHA, DEFAULT_C1, NfdmConfig
from .nn import MlpNet
from .rng import Rng

WEIGHTS_FORMAT_VERSION = 1

NFDM1_RADII = (4.0,)
NFDM1_MAX_K = 16
NFDM2_RADII = (0.2, 0.8)
NFDM2_MAX_K = 16
ENCODER_WIDTHS = (16, 16, 32)
OFFSET_WIDTHS = (16, 3)
SCALE_ENCODER_WIDTH = 16


@dataclass
class IcfpsWeights:
    c: int
    c1: int
    alpha: float
    encoder: MlpNet
    nfdm1: NfdmConfig
    head: MlpNet
    offset: MlpNet
    nfdm2: NfdmConfig

    @classmethod
    def init(cls, rng: Rng, c: int = 3, alpha: float = DEFAULT_ALPHA) -> "IcfpsWeights":
        """Fresh bundle with uniform(-sqrt(1/in), sqrt(1/in)) weights."""
        c1 = DEFAULT_C1
        ew = SCALE_ENCODER_WIDTH
        r = rng.split(8)
        encoder = MlpNet.init(c + 6, list(ENCODER_WIDTHS), ["relu"] * 3, r[0])
        nfdm1 = NfdmConfig(
            radii=list(NFDM1_RADII),
            max_k=NFDM1_MAX_K,
            encoders=[MlpNet.init(c1 + 4, [ew], ["relu"], r[1])],
            output=MlpNet.init(c1 + ew, [c1], ["relu"], r[2]),
        )
        head = MlpNet.init(c1, [1], ["sigmoid"], r[3])
        offset = MlpNet.init(3 + c1, list(OFFSET_WIDTHS), ["relu", "none"], r[4])
        center_width = 3 + c1
        nfdm2 = NfdmConfig(
            radii=list(NFDM2_RADII),
            max_k=NFDM2_MAX_K,
            encoders=[
                MlpNet.init(center_width + 4, [ew], ["relu"], r[5]),
                MlpNet.init(center_width + 4, [ew], ["relu"], r[6]),
            ],
            output=MlpNet.init(center_width + 2 * ew, [c1], ["relu"], r[7]),
        )
        return cls(
            c=c, c1=c1, alpha=float(alpha), encoder=encoder,
            nfdm1=nfdm1, head=head, offset=offset, nfdm2=nfdm2,
        )

    def trainable(self) -> dict[str, MlpNet]:
        nets = {"encoder": self.encoder, "head": self.head, "offset": self.offset}
        for i, enc in enumerate(self.nfdm1.encoders):
            nets[f"nfdm1.enc{i}"] = enc
        nets["nfdm1.output"] = self.nfdm1.output
        return nets

    def to_json_obj(self) -> dict:
        return {
            "format": WEIGHTS_FORMAT_VERSION,
            "c": self.c,
            "c1": self.c1,
            "alpha": self.alpha,
            "encoder": self.encoder.to_json_obj(),
            "nfdm1": _nfdm_to_obj(self.nfdm1),
            "head": self.head.to_json_obj(),
            "offset": self.offset.to_json_obj(),
            "nfdm2": _nfdm_to_obj(self.nfdm2),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_obj()))

    @classmethod
    def load(cls, path) -> "IcfpsWeights":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != WEIGHTS_FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported weights format {doc.get('format')!r}"
            )
        return cls(
            c=int(doc["c"]),
            c1=int(doc["c1"]),
            alpha=float(doc["alpha"]),
            encoder=MlpNet.from_json_obj(doc["encoder"]),
            nfdm1=_nfdm_from_obj(doc["nfdm1"]),
            head=MlpNet.from_json_obj(doc["head"]),
            offset=MlpNet.from_json_obj(doc["offset"]),
            nfdm2=_nfdm_from_obj(doc["nfdm2"]),
        )


def _nfdm_to_obj(cfg: NfdmConfig) -> dict:
    return {
        "radii": list(cfg.radii),
        "max_k": cfg.max_k,
        "encoders": [enc.to_json_obj() for enc in cfg.encoders],
        "output": cfg.output.to_json_obj(),
    }


def _nfdm_from_obj(obj: dict) -> NfdmConfig:
    return NfdmConfig(
        radii=[float(r) for r in obj["radii"]],
        max_k=int(obj["max_k"]),
        encoders=[MlpNet.from_json_obj(e) for e in obj["encoders"]],
        output=MlpNet.from_json_obj(obj["output"]),
    )
