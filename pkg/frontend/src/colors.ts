/** Fixed display colors, one per semantic channel.
 *
 * The palette is position-stable: channel k always renders in
 * CATEGORY_COLORS[k] regardless of which categories a scene uses, so
 * screenshots stay comparable across sessions. Names come from the
 * server's category map; the legend pairs them with these colors.
 */

export type Rgb = [number, number, number];

export const CATEGORY_COLORS: Rgb[] = [
  [238, 238, 238], // 0 free
  [120, 120, 120], // 1 wall/floor
  [214, 96, 77],   // 2 bed
  [244, 165, 130], // 3 cabinet
  [255, 188, 66],  // 4 chair
  [255, 237, 111], // 5 lamp
  [144, 190, 109], // 6 shelf
  [77, 175, 124],  // 7 sofa
  [67, 147, 195],  // 8 stool
  [146, 106, 187], // 9 table
];

export const N_CHANNELS = CATEGORY_COLORS.length;

export interface LegendEntry {
  channel: number;
  name: string;
  color: Rgb;
}

export function legendEntries(categories: Record<string, string>): LegendEntry[] {
  const entries: LegendEntry[] = [];
  for (let channel = 0; channel < N_CHANNELS; channel++) {
    const name = categories[String(channel)];
    if (name === undefined) {
      throw new Error(`server category map is missing channel ${channel}`);
    }
    entries.push({ channel, name, color: CATEGORY_COLORS[channel]! });
  }
  return entries;
}

export function cssColor([r, g, b]: Rgb): string {
  return `rgb(${r}, ${g}, ${b})`;
}
