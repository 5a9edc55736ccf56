//! Text exchange format for grille key material.
//!
//! The document is ASCII with `\n` line endings and a trailing newline.
//! Lines appear in exactly this order:
//!
//! ```text
//! DCG-GRILLE/1
//! shape: <rows>x<cols>
//! offset: center            (or `offset: <row>,<col>`)
//! si: <0..7>
//! length: <bits>            (optional, expected message length)
//! density: <decimal>        \ keyed form
//! key: <lowercase hex>      /
//! cells:                    \ explicit form, followed by <rows> lines
//! 101                       | of exactly <cols> characters '0' or '1'
//! 010                       /
//! ```
//!
//! Numbers are unsigned decimal without leading `+`. Density is written with
//! Rust's shortest round-trip `f64` formatting (`0.5`, `1`, `0.25`).

use std::path::Path;

use super::{derive_grille, load_grille, zero_pad, CardanGrille, PaddedGrille};
use crate::codec::StabilityIndex;
use crate::error::{Error, Result};

pub const MAGIC: &str = "DCG-GRILLE/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Center,
    At(usize, usize),
}

impl Placement {
    pub fn resolve(self, grille: &CardanGrille, height: usize, width: usize) -> (usize, usize) {
        match self {
            Placement::Center => grille.centered_offset(height, width),
            Placement::At(r, c) => (r, c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GrilleMaterial {
    Key { key: Vec<u8>, density: f64 },
    Cells(CardanGrille),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrilleFile {
    pub material: GrilleMaterial,
    pub shape: (usize, usize),
    pub placement: Placement,
    pub si: StabilityIndex,
    pub length: Option<usize>,
}

fn perr(line: usize, reason: impl Into<String>) -> Error {
    Error::GrilleFormat {
        line,
        reason: reason.into(),
    }
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(perr(line, format!("expected unsigned integer, got {s:?}")));
    }
    s.parse().map_err(|_| perr(line, format!("integer out of range: {s}")))
}

impl GrilleFile {
    pub fn keyed(key: &[u8], shape: (usize, usize), density: f64, si: StabilityIndex) -> Self {
        Self {
            material: GrilleMaterial::Key {
                key: key.to_vec(),
                density,
            },
            shape,
            placement: Placement::Center,
            si,
            length: None,
        }
    }

    pub fn explicit(grille: CardanGrille, si: StabilityIndex) -> Self {
        Self {
            shape: grille.shape(),
            material: GrilleMaterial::Cells(grille),
            placement: Placement::Center,
            si,
            length: None,
        }
    }

    pub fn grille(&self) -> Result<CardanGrille> {
        match &self.material {
            GrilleMaterial::Key { key, density } => derive_grille(key, self.shape, *density),
            GrilleMaterial::Cells(g) => Ok(g.clone()),
        }
    }

    pub fn padded(&self, image_shape: (usize, usize)) -> Result<PaddedGrille> {
        let grille = self.grille()?;
        let offset = self.placement.resolve(&grille, image_shape.0, image_shape.1);
        zero_pad(&grille, image_shape, Some(offset))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        out.push_str(&format!("shape: {}x{}\n", self.shape.0, self.shape.1));
        match self.placement {
            Placement::Center => out.push_str("offset: center\n"),
            Placement::At(r, c) => out.push_str(&format!("offset: {r},{c}\n")),
        }
        out.push_str(&format!("si: {}\n", self.si.get()));
        if let Some(len) = self.length {
            out.push_str(&format!("length: {len}\n"));
        }
        match &self.material {
            GrilleMaterial::Key { key, density } => {
                out.push_str(&format!("density: {density}\n"));
                out.push_str(&format!("key: {}\n", hex::encode(key)));
            }
            GrilleMaterial::Cells(g) => {
                out.push_str("cells:\n");
                for row in g.rows_as_strings() {
                    out.push_str(&row);
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        if !text.ends_with('\n') {
            return Err(perr(0, "missing trailing newline"));
        }
        let lines: Vec<&str> = text[..text.len() - 1].split('\n').collect();
        let mut cur = Cursor { lines: &lines, pos: 0 };

        let (n, rest) = cur.next(MAGIC)?;
        if !rest.is_empty() {
            return Err(perr(n, "trailing characters after header"));
        }

        let (n, shape) = cur.next("shape: ")?;
        let (r, c) = shape
            .split_once('x')
            .ok_or_else(|| perr(n, "shape must be <rows>x<cols>"))?;
        let shape = (parse_usize(r, n)?, parse_usize(c, n)?);
        if shape.0 == 0 || shape.1 == 0 {
            return Err(perr(n, "shape has a zero side"));
        }

        let (n, offset) = cur.next("offset: ")?;
        let placement = if offset == "center" {
            Placement::Center
        } else {
            let (r, c) = offset
                .split_once(',')
                .ok_or_else(|| perr(n, "offset must be `center` or <row>,<col>"))?;
            Placement::At(parse_usize(r, n)?, parse_usize(c, n)?)
        };

        let (n, si) = cur.next("si: ")?;
        let si = u8::try_from(parse_usize(si, n)?)
            .ok()
            .and_then(|v| StabilityIndex::new(v).ok())
            .ok_or_else(|| perr(n, "si must be in 0..=7"))?;

        let mut length = None;
        let material_line = cur.peek();
        if material_line.starts_with("length: ") {
            let (n, len) = cur.next("length: ")?;
            length = Some(parse_usize(len, n)?);
        }

        let material = if cur.peek().starts_with("density: ") {
            let (n, density) = cur.next("density: ")?;
            let density: f64 = density
                .parse()
                .map_err(|_| perr(n, format!("bad density {density:?}")))?;
            if !(density > 0.0 && density <= 1.0) {
                return Err(perr(n, "density outside (0, 1]"));
            }
            let (n, key) = cur.next("key: ")?;
            if key.bytes().any(|b| b.is_ascii_uppercase()) {
                return Err(perr(n, "key hex must be lowercase"));
            }
            let key = hex::decode(key).map_err(|e| perr(n, format!("bad key hex: {e}")))?;
            if key.is_empty() {
                return Err(perr(n, "empty key"));
            }
            GrilleMaterial::Key { key, density }
        } else {
            let (n, rest) = cur.next("cells:")?;
            if !rest.is_empty() {
                return Err(perr(n, "trailing characters after `cells:`"));
            }
            let mut rows = Vec::with_capacity(shape.0);
            for _ in 0..shape.0 {
                let (n, row) = cur.next("")?;
                if row.len() != shape.1 {
                    return Err(perr(n, format!("row has {} cells, expected {}", row.len(), shape.1)));
                }
                let cells = row
                    .bytes()
                    .map(|b| match b {
                        b'0' => Ok(0u8),
                        b'1' => Ok(1u8),
                        _ => Err(perr(n, format!("non-binary cell {:?}", b as char))),
                    })
                    .collect::<Result<Vec<u8>>>()?;
                rows.push(cells);
            }
            GrilleMaterial::Cells(load_grille(&rows)?)
        };

        if cur.pos != lines.len() {
            return Err(perr(cur.pos + 1, "unexpected trailing lines"));
        }
        Ok(Self {
            material,
            shape,
            placement,
            si,
            length,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

struct Cursor<'a> {
    lines: &'a [&'a str],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> &'a str {
        self.lines.get(self.pos).copied().unwrap_or_default()
    }

    fn next(&mut self, prefix: &str) -> Result<(usize, &'a str)> {
        let lineno = self.pos + 1;
        let line = self
            .lines
            .get(self.pos)
            .ok_or_else(|| perr(lineno, format!("expected {prefix:?}, found end of file")))?;
        self.pos += 1;
        line.strip_prefix(prefix)
            .map(|rest| (lineno, rest))
            .ok_or_else(|| perr(lineno, format!("expected {prefix:?}, found {line:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn si(v: u8) -> StabilityIndex {
        StabilityIndex::new(v).unwrap()
    }

    #[test]
    fn keyed_document_is_byte_exact() {
        let mut f = GrilleFile::keyed(b"\x01\xab", (32, 32), 0.5, si(5));
        f.length = Some(64);
        f.placement = Placement::At(16, 8);
        let text = f.to_text();
        assert_eq!(
            text,
            "DCG-GRILLE/1\nshape: 32x32\noffset: 16,8\nsi: 5\nlength: 64\ndensity: 0.5\nkey: 01ab\n"
        );
        assert_eq!(GrilleFile::parse(&text).unwrap(), f);
    }

    #[test]
    fn explicit_document_is_byte_exact() {
        let g = load_grille(&[[1u8, 0, 1], [0, 1, 0], [1, 0, 1]]).unwrap();
        let f = GrilleFile::explicit(g.clone(), si(7));
        let text = f.to_text();
        assert_eq!(text, "DCG-GRILLE/1\nshape: 3x3\noffset: center\nsi: 7\ncells:\n101\n010\n101\n");
        let back = GrilleFile::parse(&text).unwrap();
        assert_eq!(back.grille().unwrap(), g);
        let p = back.padded((9, 9)).unwrap();
        assert_eq!(p.offset(), (3, 3));
    }

    #[test]
    fn density_one_formats_as_integer() {
        let f = GrilleFile::keyed(b"k", (4, 4), 1.0, si(7));
        assert!(f.to_text().contains("density: 1\n"));
        assert_eq!(GrilleFile::parse(&f.to_text()).unwrap(), f);
    }

    #[test]
    fn rejects_malformed_documents() {
        let good = "DCG-GRILLE/1\nshape: 3x3\noffset: center\nsi: 7\ncells:\n101\n010\n101\n";
        assert!(GrilleFile::parse(good).is_ok());
        let cases = [
            good.trim_end(),
            &good.replace("DCG-GRILLE/1", "DCG-GRILLE/2"),
            &good.replace("si: 7", "si: 8"),
            &good.replace("010\n", "020\n"),
            &good.replace("010\n", "01\n"),
            &good.replace("shape: 3x3", "shape: 3*3"),
            &good.replace("offset: center", "offset: middle"),
            &format!("{good}extra\n"),
            "DCG-GRILLE/1\nshape: 3x3\noffset: center\nsi: 7\ndensity: 0.5\nkey: \n",
            "DCG-GRILLE/1\nshape: 3x3\noffset: center\nsi: 7\ndensity: 0\nkey: 00\n",
            "DCG-GRILLE/1\nshape: 3x3\noffset: center\nsi: 7\ndensity: 0.5\nkey: AB\n",
        ];
        for case in cases {
            assert!(GrilleFile::parse(case).is_err(), "accepted {case:?}");
        }
    }
}
