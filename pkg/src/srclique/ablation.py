"""Toy-scale block x up-sampler comparison, laid out like the paper's two ablation tables."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Sequence

from .autograd import UsageError
from .config import ModelConfig
from .data import SamplePair
from .model import build_model
from .train import train

# cell label -> (fen_kind, up_kind)
CELLS = {
    "RB + CU": ("residual", "clique"),
    "DB + CU": ("dense", "clique"),
    "CB + CU": ("clique", "clique"),
    "CB + DC": ("clique", "deconv"),
    "CB + SC": ("clique", "subpixel"),
    "CB + CU-": ("clique", "clique_nojoint"),
}
FEN_TABLE = ("Change FEN and fix IRN", ("RB + CU", "DB + CU", "CB + CU"))
IRN_TABLE = ("Change IRN and fix FEN", ("CB + DC", "CB + SC", "CB + CU-", "CB + CU"))


@dataclass
class AblationCell:
    label: str
    fen_kind: str
    up_kind: str
    best_psnr: float
    best_ssim: float
    parameters: int
    steps: int


@dataclass
class AblationReport:
    cells: dict[str, AblationCell]

    def _table(self, title: str, labels: Sequence[str]) -> str:
        labels = [x for x in labels if x in self.cells]
        if not labels:
            return ""
        width = max(10, *(len(x) for x in labels))
        head = "Metric".ljust(8) + "".join(f" | {x:>{width}}" for x in labels)
        rows = [
            "PSNR".ljust(8) + "".join(f" | {self.cells[x].best_psnr:>{width}.2f}" for x in labels),
            "SSIM".ljust(8) + "".join(f" | {self.cells[x].best_ssim:>{width}.4f}" for x in labels),
        ]
        rule = "-" * len(head)
        return "\n".join([title, rule, head, rule, *rows, rule]) + "\n"

    def to_table(self) -> str:
        parts = [self._table(*FEN_TABLE), self._table(*IRN_TABLE)]
        return "\n".join(p for p in parts if p)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("cell,fen_kind,up_kind,best_psnr_db,best_ssim,parameters,steps\n")
        for c in self.cells.values():
            buf.write(f"{c.label},{c.fen_kind},{c.up_kind},{c.best_psnr:.4f},{c.best_ssim:.6f},{c.parameters},{c.steps}\n")
        return buf.getvalue()


def ablation_matrix(
    base: ModelConfig,
    samples: Sequence[SamplePair],
    val: Sequence,
    cells: Sequence[str] | None = None,
    progress: Callable[[str], None] | None = None,
) -> AblationReport:
    """Train one model per cell from the same seed and data; keep each cell's best validation scores."""
    labels = list(cells) if cells is not None else list(CELLS)
    unknown = [x for x in labels if x not in CELLS]
    if unknown:
        raise UsageError(f"unknown ablation variant(s) {unknown}; choose from {list(CELLS)}")
    if not val:
        raise UsageError("ablation needs a validation set")
    out = {}
    for label in labels:
        fen_kind, up_kind = CELLS[label]
        cfg = base.replace(fen_kind=fen_kind, up_kind=up_kind, means=list(base.means))
        model = build_model(cfg)
        result = train(model, samples, cfg, val=val)
        out[label] = AblationCell(
            label, fen_kind, up_kind, result.best_psnr, result.best_ssim, model.num_parameters(), result.steps
        )
        if progress is not None:
            progress(f"{label}: PSNR {result.best_psnr:.2f} dB, SSIM {result.best_ssim:.4f}")
    return AblationReport(out)
