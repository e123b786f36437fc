//! Confusion matrix as an annotated heatmap.

use image::{Rgb, RgbImage};

/// Side of one cell in pixels.
pub const CELL: u32 = 32;
const SCALE: u32 = 2;

// 3x5 bitmaps, one row per u8 (low 3 bits, MSB on the left)
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn draw_number(img: &mut RgbImage, value: usize, cx: u32, cy: u32, color: Rgb<u8>) {
    let text = value.to_string();
    let glyph_w = 3 * SCALE;
    let advance = glyph_w + SCALE;
    let width = text.len() as u32 * advance - SCALE;
    let x0 = cx.saturating_sub(width / 2);
    let y0 = cy.saturating_sub(5 * SCALE / 2);
    for (k, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits >> (2 - col) & 1 == 1 {
                    for dy in 0..SCALE {
                        for dx in 0..SCALE {
                            let x = x0 + k as u32 * advance + col * SCALE + dx;
                            let y = y0 + row as u32 * SCALE + dy;
                            if x < img.width() && y < img.height() {
                                img.put_pixel(x, y, color);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Rows are true classes, columns predictions. Cell shade is the row-normalized
/// rate (white to dark blue); each cell shows its count. The first row and
/// column hold class indices.
pub fn render_confusion(confusion: &[Vec<usize>]) -> RgbImage {
    let m = confusion.len() as u32;
    let side = (m + 1) * CELL;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let grey = Rgb([90, 90, 90]);
    for k in 0..m {
        draw_number(&mut img, k as usize, (k + 1) * CELL + CELL / 2, CELL / 2, grey);
        draw_number(&mut img, k as usize, CELL / 2, (k + 1) * CELL + CELL / 2, grey);
    }
    for (r, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (c, &count) in row.iter().enumerate() {
            let rate = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            let shade = |lo: f64| (255.0 + (lo - 255.0) * rate).round() as u8;
            let fill = Rgb([shade(8.0), shade(48.0), shade(107.0)]);
            let (x0, y0) = ((c as u32 + 1) * CELL, (r as u32 + 1) * CELL);
            for y in y0..y0 + CELL {
                for x in x0..x0 + CELL {
                    let border = x == x0 || y == y0;
                    img.put_pixel(x, y, if border { Rgb([200, 200, 200]) } else { fill });
                }
            }
            let ink = if rate > 0.5 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) };
            draw_number(&mut img, count, x0 + CELL / 2, y0 + CELL / 2, ink);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_scales_with_classes() {
        let two = render_confusion(&[vec![3, 1], vec![0, 4]]);
        let four = render_confusion(&vec![vec![1; 4]; 4]);
        assert_eq!(two.dimensions(), (3 * CELL, 3 * CELL));
        assert_eq!(four.dimensions(), (5 * CELL, 5 * CELL));
    }

    #[test]
    fn full_row_is_dark() {
        let img = render_confusion(&[vec![5, 0], vec![0, 5]]);
        // a pixel near the corner of cell (0,0), away from the digits
        assert_eq!(img.get_pixel(CELL + 2, CELL + 2), &Rgb([8, 48, 107]));
        assert_eq!(img.get_pixel(2 * CELL + 2, CELL + 2), &Rgb([255, 255, 255]));
    }
}
