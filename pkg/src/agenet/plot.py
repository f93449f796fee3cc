"""Minimal static SVG line charts (no plotting dependency needed)."""


def _scale(values, lo, hi, out_lo, out_hi):
    span = (hi - lo) or 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def line_chart_svg(series, title="", xlabel="epoch", ylabel="loss",
                   width=640, height=400):
    """series: list of (label, xs, ys, color). Returns SVG text."""
    pad_l, pad_r, pad_t, pad_b = 60, 20, 40, 50
    all_x = [x for _, xs, _, _ in series for x in xs]
    all_y = [y for _, _, ys, _ in series for y in ys]
    if not all_x:
        raise ValueError("no data to plot")
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(all_y), max(all_y)
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{pad_l}" y1="{height - pad_b}" x2="{width - pad_r}" '
        f'y2="{height - pad_b}" stroke="black"/>',
        f'<line x1="{pad_l}" y1="{pad_t}" x2="{pad_l}" y2="{height - pad_b}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">{xlabel}</text>',
        f'<text x="16" y="{height / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {height / 2})">{ylabel}</text>',
        f'<text x="{pad_l}" y="{height - pad_b + 16}" font-size="10">{x_lo:g}</text>',
        f'<text x="{width - pad_r - 10}" y="{height - pad_b + 16}" font-size="10">{x_hi:g}</text>',
        f'<text x="{pad_l - 4}" y="{height - pad_b}" text-anchor="end" '
        f'font-size="10">{y_lo:.4g}</text>',
        f'<text x="{pad_l - 4}" y="{pad_t + 4}" text-anchor="end" font-size="10">{y_hi:.4g}</text>',
    ]
    for i, (label, xs, ys, color) in enumerate(series):
        px = _scale(xs, x_lo, x_hi, pad_l, width - pad_r)
        py = _scale(ys, y_lo, y_hi, height - pad_b, pad_t)
        points = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        ly = pad_t + 14 * i
        parts.append(f'<line x1="{width - pad_r - 110}" y1="{ly}" '
                     f'x2="{width - pad_r - 90}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - pad_r - 84}" y="{ly + 4}" '
                     f'font-size="11">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def history_plot(history, path, title="training loss"):
    xs = [row[0] for row in history.epochs]
    train = [row[1] for row in history.epochs]
    val = [row[2] for row in history.epochs]
    svg = line_chart_svg(
        [("train", xs, train, "#1f4fd8"), ("validation", xs, val, "#d8321f")],
        title=title)
    with open(path, "w") as fh:
        fh.write(svg)
