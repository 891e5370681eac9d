"""Data-center cost model: compute, storage and egress, and the view count
at which perceptual compression pays for its extra compute.

Assumptions baked into the defaults: the baseline transcode costs
``baseline_transcode_cost_per_video`` dollars per video, the perceptual
transcode costs ``vignette_compute_multiplier`` times that once per video,
and each view transfers one variant of ``video_size_gb``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields, replace

from vignette.errors import InputError

# compute-price multipliers relative to on-demand
RESERVED_DISCOUNT = 0.36
SPOT_DISCOUNT = 0.73


@dataclass(frozen=True)
class CostParams:
    num_videos: float = 1e6
    video_size_gb: float = 0.01
    variants: float = 100
    total_storage_gb: float = 5e5
    storage_price_per_gb_month: float = 0.023
    transfer_price_per_gb: float = 0.05
    baseline_transcode_cost_per_video: float = 0.212
    vignette_compute_multiplier: float = 5.0
    compressed_fraction: float = 0.10
    horizon_months: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise InputError(f"cost parameter {f.name} must be positive")
        if not 0 < self.compressed_fraction <= 1:
            raise InputError("compressed_fraction must be in (0, 1]")

    def with_pricing(self, tier: str) -> "CostParams":
        """On-demand, reserved or spot compute pricing."""
        discount = {"on-demand": 0.0, "reserved": RESERVED_DISCOUNT, "spot": SPOT_DISCOUNT}
        if tier not in discount:
            raise InputError(f"unknown pricing tier {tier!r}")
        return replace(self, baseline_transcode_cost_per_video=self.baseline_transcode_cost_per_video
                       * (1.0 - discount[tier]))

    def override(self, **kv) -> "CostParams":
        known = {f.name for f in fields(self)}
        bad = set(kv) - known
        if bad:
            raise InputError(f"unknown cost parameter(s): {', '.join(sorted(bad))}")
        return replace(self, **{k: float(v) for k, v in kv.items()})


def cost_breakdown(p: CostParams, views: float, vignette: bool) -> dict:
    if views < 0:
        raise InputError("views must be >= 0")
    frac = p.compressed_fraction if vignette else 1.0
    compute = p.num_videos * p.baseline_transcode_cost_per_video * (p.vignette_compute_multiplier if vignette else 1.0)
    storage = p.total_storage_gb * frac * p.storage_price_per_gb_month * p.horizon_months
    transfer = views * p.video_size_gb * frac * p.transfer_price_per_gb
    return {"compute": compute, "storage": storage, "transfer": transfer, "total": compute + storage + transfer}


def system_cost(p: CostParams, views: float, vignette: bool) -> float:
    return cost_breakdown(p, views, vignette)["total"]


def breakeven_views(p: CostParams) -> float:
    """Views at which the perceptual system becomes no more expensive."""
    savings_per_view = (1.0 - p.compressed_fraction) * p.video_size_gb * p.transfer_price_per_gb
    if savings_per_view <= 0:
        raise InputError("no per-view savings (compressed_fraction must be < 1)")
    d_compute = p.num_videos * p.baseline_transcode_cost_per_video * (p.vignette_compute_multiplier - 1.0)
    d_storage = p.total_storage_gb * (1.0 - p.compressed_fraction) * p.storage_price_per_gb_month * p.horizon_months
    return max(0.0, (d_compute - d_storage) / savings_per_view)


def sweep(p: CostParams, views_list) -> list[dict]:
    rows = []
    for v in views_list:
        base = system_cost(p, v, False)
        vig = system_cost(p, v, True)
        rows.append({"views": v, "baseline_usd": base, "vignette_usd": vig, "savings_usd": base - vig})
    return rows


def geometric_views(lo: float = 1e6, hi: float = 1e11, steps: int = 51) -> list[float]:
    r = (hi / lo) ** (1.0 / (steps - 1))
    return [lo * r ** i for i in range(steps)]


def sweep_csv(p: CostParams, views_list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["views", "baseline_usd", "vignette_usd", "savings_usd"], lineterminator="\n")
    w.writeheader()
    for row in sweep(p, views_list):
        w.writerow({k: f"{v:.6g}" if k == "views" else f"{v:.2f}" for k, v in row.items()})
    return buf.getvalue()


def as_table(p: CostParams) -> dict:
    return asdict(p)
