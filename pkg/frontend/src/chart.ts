/** Gate-trajectory line chart as inline SVG: one point per iteration,
 * a dashed horizontal rule at the gate threshold. Pure geometry so it is
 * unit-testable; values come straight from the API payload. */

export interface ChartGeometry {
  width: number;
  height: number;
  points: { x: number; y: number; value: number }[];
  thresholdY: number;
}

const PAD = { left: 34, right: 10, top: 10, bottom: 22 };

export function chartGeometry(
  trajectory: number[],
  threshold: number,
  width = 420,
  height = 160
): ChartGeometry {
  const innerW = width - PAD.left - PAD.right;
  const innerH = height - PAD.top - PAD.bottom;
  const x = (i: number) =>
    PAD.left +
    (trajectory.length <= 1 ? innerW / 2 : (i * innerW) / (trajectory.length - 1));
  const y = (v: number) => PAD.top + (1 - v) * innerH; // gate values live in [0, 1]
  return {
    width,
    height,
    points: trajectory.map((value, i) => ({ x: x(i), y: y(value), value })),
    thresholdY: y(threshold),
  };
}

export function renderChart(
  doc: Document,
  trajectory: number[],
  threshold: number
): SVGSVGElement {
  const geometry = chartGeometry(trajectory, threshold);
  const ns = "http://www.w3.org/2000/svg";
  const svg = doc.createElementNS(ns, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${geometry.width} ${geometry.height}`);
  svg.setAttribute("class", "gate-chart");
  svg.setAttribute("role", "img");

  const rule = doc.createElementNS(ns, "line");
  rule.setAttribute("x1", String(PAD.left));
  rule.setAttribute("x2", String(geometry.width - PAD.right));
  rule.setAttribute("y1", String(geometry.thresholdY));
  rule.setAttribute("y2", String(geometry.thresholdY));
  rule.setAttribute("class", "threshold");
  rule.setAttribute("stroke-dasharray", "4 3");
  svg.appendChild(rule);

  const label = doc.createElementNS(ns, "text");
  label.setAttribute("x", "2");
  label.setAttribute("y", String(geometry.thresholdY + 4));
  label.setAttribute("class", "threshold-label");
  label.textContent = String(threshold);
  svg.appendChild(label);

  if (geometry.points.length > 1) {
    const path = doc.createElementNS(ns, "polyline");
    path.setAttribute(
      "points",
      geometry.points.map((p) => `${p.x},${p.y}`).join(" ")
    );
    path.setAttribute("class", "trajectory");
    path.setAttribute("fill", "none");
    svg.appendChild(path);
  }
  for (const point of geometry.points) {
    const dot = doc.createElementNS(ns, "circle");
    dot.setAttribute("cx", String(point.x));
    dot.setAttribute("cy", String(point.y));
    dot.setAttribute("r", "3.5");
    dot.setAttribute("class", point.value < threshold ? "dot below" : "dot");
    const title = doc.createElementNS(ns, "title");
    title.textContent = String(point.value);
    dot.appendChild(title);
    svg.appendChild(dot);
  }
  return svg;
}
