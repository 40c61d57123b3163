"""Disk-map figures rendered alongside CLI reports.

One horizontal map of the disk: the layout regions on the top lane and
command-specific highlight spans (diff ranges, live and deleted streams)
below it. Rendering uses the Agg backend so it works headless.
"""

from typing import List, Optional, Tuple

from .layout import LayoutProfile

# (label, abs offset, length, lane) spans; lane 0 is the layout row
Span = Tuple[str, int, int]

_REGION_COLORS = {
    "start-sectors": "#888888",
    "header": "#d62728",
    "block-list": "#ff7f0e",
    "channel-list": "#bcbd22",
    "record-state": "#9467bd",
    "fixed": "#7f7f7f",
    "video": "#1f77b4",
    "partition-2": "#2ca02c",
    "tail": "#555555",
}

_HIGHLIGHT_COLORS = {
    "diff": "#d62728",
    "live": "#2ca02c",
    "deleted": "#ff7f0e",
    "carved": "#1f77b4",
}


def layout_spans(profile: LayoutProfile, p1_base: int, image_size: int) -> List[Span]:
    spans = [("start-sectors", 0, p1_base)]
    names = profile.named_regions()
    for name, start, length in names:
        if name == "video":
            length = max(image_size - profile.partition2_len - profile.tail_len
                         - (p1_base + start), 0)
        spans.append((name, p1_base + start, length))
    p2_start = image_size - profile.tail_len - profile.partition2_len
    spans.append(("partition-2", p2_start, profile.partition2_len))
    spans.append(("tail", image_size - profile.tail_len, profile.tail_len))
    return spans


def render_disk_map(out_path, profile: LayoutProfile, p1_base: int,
                    image_size: int,
                    highlights: Optional[List[Span]] = None,
                    title: str = "") -> str:
    """Write a PNG disk map; returns the output path."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Patch

    highlights = highlights or []
    fig, ax = plt.subplots(figsize=(11, 3.2))

    for name, start, length in layout_spans(profile, p1_base, image_size):
        if length <= 0:
            continue
        ax.broken_barh([(start, length)], (10, 8),
                       facecolors=_REGION_COLORS.get(name, "#cccccc"),
                       edgecolor="none")
    seen = []
    for kind, start, length in highlights:
        ax.broken_barh([(start, max(length, image_size // 2000, 1))], (0, 8),
                       facecolors=_HIGHLIGHT_COLORS.get(kind, "#000000"),
                       edgecolor="none")
        if kind not in seen:
            seen.append(kind)

    ax.set_ylim(-2, 20)
    ax.set_xlim(0, image_size)
    ax.set_yticks([4, 14])
    ax.set_yticklabels(["findings", "layout"])
    ax.set_xlabel("absolute byte offset")
    if title:
        ax.set_title(title)
    legend = [Patch(facecolor=c, label=n) for n, c in _REGION_COLORS.items()]
    legend += [Patch(facecolor=_HIGHLIGHT_COLORS[k], label=k) for k in seen]
    ax.legend(handles=legend, loc="upper center", ncol=6, fontsize=7,
              bbox_to_anchor=(0.5, -0.25))
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return str(out_path)
