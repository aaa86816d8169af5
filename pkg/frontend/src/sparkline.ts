/** SVG polyline points for a life-counter sparkline.
 *
 * The series is normalised to the box; a flat series (counter stalled,
 * e.g. the node is starved by a flood) renders as a horizontal line at
 * mid height, which is exactly the flatline the operator looks for.
 */
export function sparklinePoints(
  values: number[],
  width: number,
  height: number,
): string {
  if (values.length === 0) {
    return "";
  }
  if (values.length === 1) {
    return `0,${height / 2} ${width},${height / 2}`;
  }
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo;
  const stepX = width / (values.length - 1);
  return values
    .map((v, i) => {
      const y = span === 0 ? height / 2 : height - ((v - lo) / span) * height;
      return `${(i * stepX).toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}
