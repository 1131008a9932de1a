"""
Report Service: SVG renderings (Kaplan-Meier curves, t-SNE scatter, feature
overlays) and their sidecar data.
"""
import logging
import os
import xml.etree.ElementTree as ET
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from pathx.ml.attribution import Attribution, FeatureLocalization  # noqa: E402
from pathx.models.models import LogRankResult, SurvivalCurve  # noqa: E402
from pathx.utils.serializer import write_json  # noqa: E402

logger = logging.getLogger(__name__)

PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]
RISK_COLORS = {"Low": "#2ca02c", "Medium": "#ff7f0e", "High": "#d62728"}

# fixed ids and no timestamp keep SVG output byte-stable
matplotlib.rcParams["svg.hashsalt"] = "pathx"
matplotlib.rcParams["svg.fonttype"] = "none"


def _color(name: str, index: int) -> str:
    return RISK_COLORS.get(name, PALETTE[index % len(PALETTE)])


def _save_svg(fig, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_km_svg(path: str, curves: Sequence[SurvivalCurve], logrank: Sequence[LogRankResult] = (), title: str = "") -> None:
    """Step lines per risk group"""
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for i, curve in enumerate(curves):
        times = [step.time for step in curve.steps]
        survival = [step.survival for step in curve.steps]
        n = curve.steps[0].at_risk if curve.steps else 0
        ax.step(times, survival, where="post", color=_color(curve.group, i), label=f"{curve.group} (n={n})")
    ax.set_xlabel("Time (days)")
    ax.set_ylabel("Survival probability")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    if logrank:
        text = "\n".join(f"{r.comparison} p={r.p_value:.2e}" for r in logrank)
        ax.text(0.98, 0.98, text, transform=ax.transAxes, ha="right", va="top", fontsize=8)
    ax.legend(loc="lower left")
    _save_svg(fig, path)


def write_tsne_svg(path: str, coordinates: np.ndarray, groups: Sequence[str], order: Sequence[str], title: str = "") -> None:
    """Scatter colored by risk group"""
    fig, ax = plt.subplots(figsize=(6.4, 6.4))
    groups = np.asarray(groups)
    for i, name in enumerate(order):
        mask = groups == name
        if np.any(mask):
            ax.scatter(coordinates[mask, 0], coordinates[mask, 1], s=12, color=_color(name, i), label=name)
    ax.set_xlabel("t-SNE 1")
    ax.set_ylabel("t-SNE 2")
    if title:
        ax.set_title(title)
    ax.legend(loc="best")
    _save_svg(fig, path)


# -- feature overlays --

def overlay_document(
    case_id: str,
    image_href: str,
    width: int,
    height: int,
    localization: FeatureLocalization,
    attribution: Optional[Attribution] = None,
    features: Optional[Sequence[int]] = None,
    boxes_per_feature: int = 1,
) -> Dict:
    """Sidecar structure: tile geometry, feature legend and one box per (feature, top patch)"""
    if width <= 0 or height <= 0:
        raise ValueError("overlay needs a positive tile size")
    features = list(features) if features is not None else localization.features
    legend = []
    boxes = []
    for rank, feature in enumerate(features, start=1):
        if feature not in localization.top_patches:
            raise ValueError(f"feature {feature} has no localization")
        phi = float(attribution.phi[feature]) if attribution is not None else 0.0
        legend.append({"rank": rank, "feature_index": int(feature), "phi": phi})
        for row, col, saliency in localization.top_patches[feature][:boxes_per_feature]:
            if not (0 <= row < localization.grid_size and 0 <= col < localization.grid_size):
                raise ValueError(f"patch ({row}, {col}) outside the {localization.grid_size}x{localization.grid_size} grid")
            boxes.append({
                "rank": rank,
                "feature_index": int(feature),
                "patch_row": int(row),
                "patch_col": int(col),
                "saliency": float(saliency),
            })
    return {
        "case_id": case_id,
        "image": image_href,
        "width": int(width),
        "height": int(height),
        "patch_size": localization.patch_size,
        "grid_size": localization.grid_size,
        "method": localization.method,
        "features": legend,
        "boxes": boxes,
    }


def _fmt(value: float) -> str:
    return f"{value:g}"


def render_overlay_svg(sidecar: Dict) -> str:
    """SVG text for a sidecar; boxes are scaled from the ViT grid to the tile size"""
    width, height = sidecar["width"], sidecar["height"]
    span = sidecar["grid_size"] * sidecar["patch_size"]
    scale_x, scale_y = width / span, height / span
    p = sidecar["patch_size"]

    svg = ET.Element("svg", {
        "xmlns": "http://www.w3.org/2000/svg",
        "width": str(width),
        "height": str(height),
        "viewBox": f"0 0 {width} {height}",
    })
    ET.SubElement(svg, "image", {
        "href": sidecar["image"], "x": "0", "y": "0", "width": str(width), "height": str(height),
    })

    boxes = ET.SubElement(svg, "g", {"id": "boxes"})
    for box in sidecar["boxes"]:
        color = PALETTE[(box["rank"] - 1) % len(PALETTE)]
        x = box["patch_col"] * p * scale_x
        y = box["patch_row"] * p * scale_y
        ET.SubElement(boxes, "rect", {
            "class": "box",
            "x": _fmt(x), "y": _fmt(y), "width": _fmt(p * scale_x), "height": _fmt(p * scale_y),
            "fill": "none", "stroke": color, "stroke-width": "2",
            "data-feature": str(box["feature_index"]),
        })
        label = ET.SubElement(boxes, "text", {
            "x": _fmt(x + 2), "y": _fmt(y + 12), "fill": color, "font-size": "11", "font-family": "sans-serif",
        })
        label.text = str(box["rank"])

    legend = ET.SubElement(svg, "g", {"id": "legend", "font-size": "10", "font-family": "sans-serif"})
    for i, entry in enumerate(sidecar["features"]):
        line = ET.SubElement(legend, "text", {
            "x": "4", "y": str(14 + 12 * i), "fill": PALETTE[(entry["rank"] - 1) % len(PALETTE)],
        })
        line.text = f"{entry['rank']}. f{entry['feature_index']} phi={entry['phi']:.4g}"

    ET.indent(svg)
    return ET.tostring(svg, encoding="unicode") + "\n"


def render_overlay(svg_path: str, json_path: str, sidecar: Dict) -> None:
    """Write the overlay SVG and its JSON sidecar"""
    directory = os.path.dirname(svg_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(svg_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_overlay_svg(sidecar))
    write_json(json_path, sidecar)
    logger.debug(f"Overlay for {sidecar['case_id']}: {len(sidecar['boxes'])} boxes -> {svg_path}")


def attribution_rows(attribution: Attribution, top: List[int]) -> List[tuple]:
    """attributions.csv rows: case_id,feature_index,phi,rank"""
    return [(attribution.case_id, index, float(attribution.phi[index]), rank) for rank, index in enumerate(top, start=1)]
