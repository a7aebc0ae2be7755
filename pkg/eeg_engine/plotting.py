"""SVG output of matplotlib figures, byte-identical across reruns."""

import io

import matplotlib
from matplotlib.figure import Figure

SVG_HASH_SALT = "eeg-engine"

# text stays as <text> elements so labels remain searchable
SVG_RC = {
    "svg.hashsalt": SVG_HASH_SALT,
    "svg.fonttype": "none",
    "font.family": "sans-serif",
}


def new_figure(width_in: float, height_in: float) -> Figure:
    """A figure detached from pyplot, safe to build off the main thread."""
    return Figure(figsize=(width_in, height_in))


def figure_svg(figure: Figure) -> str:
    buffer = io.StringIO()
    with matplotlib.rc_context(SVG_RC):
        figure.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()
