/** Offset-driven span highlighting.
 *
 * Annotation offsets count Unicode code points (the server's contract),
 * while JavaScript string indices count UTF-16 code units, so all
 * slicing here goes through a code-point array. Highlighting is never
 * string-search-driven: a span's placement comes only from its offsets,
 * which is what keeps repeated mentions distinguishable.
 */

export interface HighlightSpan {
  start: number;
  end: number;
  layer: "gold" | "predicted";
  category: string;
}

export interface Segment {
  start: number;
  end: number;
  text: string;
  gold: HighlightSpan[];
  predicted: HighlightSpan[];
}

/** Cut text into segments at every span boundary; each segment carries
 * the spans covering it. Concatenating segment texts restores the exact
 * document text. */
export function segmentText(text: string, spans: HighlightSpan[]): Segment[] {
  const points = Array.from(text);
  const boundaries = new Set<number>([0, points.length]);
  for (const span of spans) {
    boundaries.add(Math.max(0, Math.min(span.start, points.length)));
    boundaries.add(Math.max(0, Math.min(span.end, points.length)));
  }
  const cuts = Array.from(boundaries).sort((a, b) => a - b);
  const segments: Segment[] = [];
  for (let i = 0; i + 1 < cuts.length; i++) {
    const [lo, hi] = [cuts[i], cuts[i + 1]];
    if (lo === hi) continue;
    const covering = spans.filter((s) => s.start <= lo && hi <= s.end);
    segments.push({
      start: lo,
      end: hi,
      text: points.slice(lo, hi).join(""),
      gold: covering.filter((s) => s.layer === "gold"),
      predicted: covering.filter((s) => s.layer === "predicted"),
    });
  }
  return segments;
}

/** Slice by code-point offsets (the invariant the console is tested on:
 * sliceByOffsets(text, a.start, a.end) === a.mention). */
export function sliceByOffsets(text: string, start: number, end: number): string {
  return Array.from(text).slice(start, end).join("");
}

/** Render the segmented document into DOM nodes. Highlighted segments
 * become <mark> elements carrying their covering spans' offsets as data
 * attributes so tests (and tooltips) can verify exact placement. */
export function renderHighlights(
  doc: Document,
  text: string,
  spans: HighlightSpan[]
): HTMLElement {
  const container = doc.createElement("div");
  container.className = "doc-text";
  for (const segment of segmentText(text, spans)) {
    if (segment.gold.length === 0 && segment.predicted.length === 0) {
      container.appendChild(doc.createTextNode(segment.text));
      continue;
    }
    const mark = doc.createElement("mark");
    const classes = ["span"];
    if (segment.gold.length > 0) classes.push("gold");
    if (segment.predicted.length > 0) classes.push("predicted");
    if (segment.gold.length > 0 && segment.predicted.length > 0) {
      classes.push("both");
    }
    mark.className = classes.join(" ");
    mark.textContent = segment.text;
    const covering = [...segment.gold, ...segment.predicted];
    mark.dataset.spans = covering
      .map((s) => `${s.layer}:${s.start}-${s.end}:${s.category}`)
      .join(" ");
    mark.title = covering
      .map((s) => `${s.layer} ${s.category} [${s.start}, ${s.end})`)
      .join("\n");
    container.appendChild(mark);
  }
  return container;
}
