//! Minimal baseline TIFF: uncompressed, grayscale, striped, 8 or 16 bits per sample.
//!
//! Files are written little-endian with one strip per page; pixel data for each page
//! precedes its IFD. Reading accepts either byte order and any number of strips, and
//! rejects everything else (tiles, compression, colour, float samples, BigTIFF).

use std::fs;
use std::io::Write;
use std::path::Path;

use super::stack::{BitDepth, Dims, ImageStack};
use crate::error::{Error, Result};

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_IMAGE_DESCRIPTION: u16 = 270;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_SAMPLE_FORMAT: u16 = 339;

const TYPE_ASCII: u16 = 2;
const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;

const VOXEL_PREFIX: &str = "rawscore voxel_size=";

pub fn read_stack(path: impl AsRef<Path>) -> Result<ImageStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_stack_from(&bytes)
}

pub fn write_stack(stack: &ImageStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_stack_to(stack);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Entry {
    tag: u16,
    typ: u16,
    count: u32,
    /// Inline value or offset, already little-endian packed.
    value: [u8; 4],
}

fn short_entry(tag: u16, v: u16) -> Entry {
    let mut value = [0u8; 4];
    value[..2].copy_from_slice(&v.to_le_bytes());
    Entry { tag, typ: TYPE_SHORT, count: 1, value }
}

fn long_entry(tag: u16, v: u32) -> Entry {
    Entry { tag, typ: TYPE_LONG, count: 1, value: v.to_le_bytes() }
}

/// Serializes a stack into TIFF bytes; one page per z-slice.
pub fn write_stack_to(stack: &ImageStack) -> Vec<u8> {
    let dims = stack.dims();
    let bps = stack.bit_depth().bytes_per_sample();
    let page_bytes = dims.slice_len() * bps;
    let vs = stack.voxel_size();
    let mut description = format!("{VOXEL_PREFIX}{},{},{}", vs[0], vs[1], vs[2]).into_bytes();
    description.push(0);

    let mut out = Vec::with_capacity(8 + dims.depth * (page_bytes + 200));
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    let first_ifd_ptr = out.len();
    out.extend_from_slice(&0u32.to_le_bytes());

    let mut prev_next_ptr = first_ifd_ptr;
    for z in 0..dims.depth {
        let strip_offset = out.len() as u32;
        match stack.bit_depth() {
            BitDepth::Eight => out.extend(stack.slice(z).iter().map(|&v| v as u8)),
            BitDepth::Sixteen => {
                for &v in stack.slice(z) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let desc_offset = if z == 0 {
            if out.len() % 2 == 1 {
                out.push(0);
            }
            let off = out.len() as u32;
            out.extend_from_slice(&description);
            Some(off)
        } else {
            None
        };
        if out.len() % 2 == 1 {
            out.push(0);
        }

        let mut entries = vec![
            long_entry(TAG_IMAGE_WIDTH, dims.width as u32),
            long_entry(TAG_IMAGE_LENGTH, dims.height as u32),
            short_entry(TAG_BITS_PER_SAMPLE, u16::from(stack.bit_depth().bits())),
            short_entry(TAG_COMPRESSION, 1),
            short_entry(TAG_PHOTOMETRIC, 1),
        ];
        if let Some(off) = desc_offset {
            entries.push(Entry {
                tag: TAG_IMAGE_DESCRIPTION,
                typ: TYPE_ASCII,
                count: description.len() as u32,
                value: off.to_le_bytes(),
            });
        }
        entries.extend([
            long_entry(TAG_STRIP_OFFSETS, strip_offset),
            short_entry(TAG_SAMPLES_PER_PIXEL, 1),
            long_entry(TAG_ROWS_PER_STRIP, dims.height as u32),
            long_entry(TAG_STRIP_BYTE_COUNTS, page_bytes as u32),
            short_entry(TAG_PLANAR_CONFIG, 1),
            short_entry(TAG_SAMPLE_FORMAT, 1),
        ]);

        let ifd_offset = out.len() as u32;
        out[prev_next_ptr..prev_next_ptr + 4].copy_from_slice(&ifd_offset.to_le_bytes());
        out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
        for e in &entries {
            out.extend_from_slice(&e.tag.to_le_bytes());
            out.extend_from_slice(&e.typ.to_le_bytes());
            out.extend_from_slice(&e.count.to_le_bytes());
            out.extend_from_slice(&e.value);
        }
        prev_next_ptr = out.len();
        out.extend_from_slice(&0u32.to_le_bytes());
    }
    out
}

#[derive(Clone, Copy)]
enum Order {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    order: Order,
}

impl Reader<'_> {
    fn slice(&self, off: usize, len: usize) -> Result<&[u8]> {
        off.checked_add(len)
            .and_then(|end| self.bytes.get(off..end))
            .ok_or_else(|| Error::CorruptFile(format!("read of {len} bytes at offset {off} past end of file")))
    }

    fn u16(&self, off: usize) -> Result<u16> {
        let b: [u8; 2] = self.slice(off, 2)?.try_into().expect("2 bytes");
        Ok(match self.order {
            Order::Little => u16::from_le_bytes(b),
            Order::Big => u16::from_be_bytes(b),
        })
    }

    fn u32(&self, off: usize) -> Result<u32> {
        let b: [u8; 4] = self.slice(off, 4)?.try_into().expect("4 bytes");
        Ok(match self.order {
            Order::Little => u32::from_le_bytes(b),
            Order::Big => u32::from_be_bytes(b),
        })
    }
}

#[derive(Default)]
struct Page {
    width: Option<u32>,
    height: Option<u32>,
    bits: Option<Vec<u32>>,
    compression: u32,
    photometric: Option<u32>,
    samples_per_pixel: u32,
    sample_format: u32,
    planar: u32,
    tiled: bool,
    strip_offsets: Vec<u32>,
    strip_counts: Vec<u32>,
    description: Option<String>,
}

fn read_values(r: &Reader<'_>, entry_off: usize) -> Result<(u16, Vec<u32>)> {
    let typ = r.u16(entry_off + 2)?;
    let count = r.u32(entry_off + 4)? as usize;
    let size = match typ {
        1 | 2 | 6 | 7 => 1,
        3 | 8 => 2,
        4 | 9 | 11 => 4,
        5 | 10 | 12 => 8,
        _ => return Err(Error::CorruptFile(format!("unknown field type {typ}"))),
    };
    let total = count
        .checked_mul(size)
        .ok_or_else(|| Error::CorruptFile("field size overflow".into()))?;
    let data_off = if total <= 4 { entry_off + 8 } else { r.u32(entry_off + 8)? as usize };
    r.slice(data_off, total)?;
    let mut vals = Vec::with_capacity(count.min(1 << 20));
    match typ {
        3 => {
            for i in 0..count {
                vals.push(u32::from(r.u16(data_off + 2 * i)?));
            }
        }
        4 => {
            for i in 0..count {
                vals.push(r.u32(data_off + 4 * i)?);
            }
        }
        1 | 2 | 7 => {
            vals.extend(r.slice(data_off, count)?.iter().map(|&b| u32::from(b)));
        }
        _ => {}
    }
    Ok((typ, vals))
}

fn parse_voxel_size(desc: &str) -> Option<[f64; 3]> {
    let rest = desc.trim_end_matches('\0').strip_prefix(VOXEL_PREFIX)?;
    let parts: Vec<f64> = rest.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    match parts.as_slice() {
        &[x, y, z] if x > 0.0 && y > 0.0 && z > 0.0 => Some([x, y, z]),
        _ => None,
    }
}

/// Parses TIFF bytes into a stack; every page must share size and bit depth.
pub fn read_stack_from(bytes: &[u8]) -> Result<ImageStack> {
    if bytes.len() < 8 {
        return Err(Error::CorruptFile("file shorter than TIFF header".into()));
    }
    let order = match &bytes[..2] {
        b"II" => Order::Little,
        b"MM" => Order::Big,
        _ => return Err(Error::UnsupportedFormat("not a TIFF file".into())),
    };
    let r = Reader { bytes, order };
    match r.u16(2)? {
        42 => {}
        43 => return Err(Error::UnsupportedFormat("BigTIFF is not supported".into())),
        m => return Err(Error::UnsupportedFormat(format!("bad TIFF magic {m}"))),
    }

    let mut pages = Vec::new();
    let mut next = r.u32(4)? as usize;
    let mut visited = std::collections::BTreeSet::new();
    while next != 0 {
        if !visited.insert(next) {
            return Err(Error::CorruptFile("IFD chain loops".into()));
        }
        let n = r.u16(next)? as usize;
        let mut page = Page { compression: 1, samples_per_pixel: 1, sample_format: 1, planar: 1, ..Page::default() };
        for i in 0..n {
            let e = next + 2 + 12 * i;
            let tag = r.u16(e)?;
            let (typ, vals) = read_values(&r, e)?;
            let first = vals.first().copied();
            match tag {
                TAG_IMAGE_WIDTH => page.width = first,
                TAG_IMAGE_LENGTH => page.height = first,
                TAG_BITS_PER_SAMPLE => page.bits = Some(vals),
                TAG_COMPRESSION => page.compression = first.unwrap_or(1),
                TAG_PHOTOMETRIC => page.photometric = first,
                TAG_IMAGE_DESCRIPTION if typ == TYPE_ASCII => {
                    let raw: Vec<u8> = vals.iter().map(|&v| v as u8).collect();
                    page.description = Some(String::from_utf8_lossy(&raw).into_owned());
                }
                TAG_STRIP_OFFSETS => page.strip_offsets = vals,
                TAG_SAMPLES_PER_PIXEL => page.samples_per_pixel = first.unwrap_or(1),
                TAG_STRIP_BYTE_COUNTS => page.strip_counts = vals,
                TAG_PLANAR_CONFIG => page.planar = first.unwrap_or(1),
                TAG_TILE_WIDTH => page.tiled = true,
                TAG_SAMPLE_FORMAT => page.sample_format = first.unwrap_or(1),
                _ => {}
            }
        }
        pages.push(page);
        next = r.u32(next + 2 + 12 * n)? as usize;
    }
    if pages.is_empty() {
        return Err(Error::CorruptFile("no image directories".into()));
    }

    let mut data = Vec::new();
    let mut geometry: Option<(u32, u32, BitDepth)> = None;
    let mut voxel_size = [1.0; 3];
    for (z, page) in pages.iter().enumerate() {
        if page.tiled {
            return Err(Error::UnsupportedFormat("tiled TIFF".into()));
        }
        if page.compression != 1 {
            return Err(Error::UnsupportedFormat(format!("compression scheme {}", page.compression)));
        }
        if page.samples_per_pixel != 1 {
            return Err(Error::UnsupportedFormat(format!("{} samples per pixel", page.samples_per_pixel)));
        }
        if page.sample_format != 1 {
            return Err(Error::UnsupportedFormat(format!("sample format {}", page.sample_format)));
        }
        match page.photometric {
            Some(1) | None => {}
            Some(p) => return Err(Error::UnsupportedFormat(format!("photometric interpretation {p}"))),
        }
        let (w, h) = match (page.width, page.height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
            _ => return Err(Error::CorruptFile(format!("page {z} lacks image dimensions"))),
        };
        let bits = match page.bits.as_deref() {
            None | Some([]) => 1,
            Some([b]) => *b,
            Some(_) => return Err(Error::UnsupportedFormat("multi-channel BitsPerSample".into())),
        };
        let depth = match bits {
            8 => BitDepth::Eight,
            16 => BitDepth::Sixteen,
            b => return Err(Error::UnsupportedFormat(format!("{b} bits per sample"))),
        };
        match geometry {
            None => geometry = Some((w, h, depth)),
            Some(g) if g != (w, h, depth) => {
                return Err(Error::UnsupportedFormat("pages differ in size or bit depth".into()))
            }
            Some(_) => {}
        }
        if z == 0 {
            if let Some(vs) = page.description.as_deref().and_then(parse_voxel_size) {
                voxel_size = vs;
            }
        }
        if page.strip_offsets.is_empty() || page.strip_offsets.len() != page.strip_counts.len() {
            return Err(Error::CorruptFile(format!("page {z} has inconsistent strip tables")));
        }
        let expected = w as usize * h as usize * depth.bytes_per_sample();
        let mut page_bytes = Vec::with_capacity(expected);
        for (&off, &cnt) in page.strip_offsets.iter().zip(&page.strip_counts) {
            page_bytes.extend_from_slice(r.slice(off as usize, cnt as usize)?);
        }
        if page_bytes.len() < expected {
            return Err(Error::CorruptFile(format!(
                "page {z} holds {} bytes, expected {expected}",
                page_bytes.len()
            )));
        }
        page_bytes.truncate(expected);
        match depth {
            BitDepth::Eight => data.extend(page_bytes.iter().map(|&b| u16::from(b))),
            BitDepth::Sixteen => data.extend(page_bytes.chunks_exact(2).map(|c| match order {
                Order::Little => u16::from_le_bytes([c[0], c[1]]),
                Order::Big => u16::from_be_bytes([c[0], c[1]]),
            })),
        }
    }
    let (w, h, depth) = geometry.expect("at least one page");
    let dims = Dims::new(w as usize, h as usize, pages.len());
    ImageStack::new(data, dims, depth)?.with_voxel_size(voxel_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Hand-assembled single-page 16-bit little-endian file (2x1 pixels).
    fn handmade_tiff(first_sample: [u8; 2]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"II");
        b.extend_from_slice(&[42, 0]);
        b.extend_from_slice(&[12, 0, 0, 0]); // IFD at 12
        b.extend_from_slice(&first_sample); // strip at 8
        b.extend_from_slice(&[0x34, 0x12]);
        let entries: [(u16, u16, u32, u32); 7] = [
            (256, 3, 1, 2),
            (257, 3, 1, 1),
            (258, 3, 1, 16),
            (259, 3, 1, 1),
            (273, 4, 1, 8),
            (278, 3, 1, 1),
            (279, 4, 1, 4),
        ];
        b.extend_from_slice(&(entries.len() as u16).to_le_bytes());
        for (tag, typ, count, value) in entries {
            b.extend_from_slice(&tag.to_le_bytes());
            b.extend_from_slice(&typ.to_le_bytes());
            b.extend_from_slice(&count.to_le_bytes());
            b.extend_from_slice(&value.to_le_bytes());
        }
        b.extend_from_slice(&[0, 0, 0, 0]);
        b
    }

    #[test]
    fn byte_level_oracle_file() {
        let s = read_stack_from(&handmade_tiff([0x00, 0x01])).unwrap();
        assert_eq!(s.dims(), Dims::new(2, 1, 1));
        assert_eq!(s.bit_depth(), BitDepth::Sixteen);
        assert_eq!(s.data(), &[256, 0x1234]);
    }

    #[test]
    fn two_page_metadata() {
        let stack = ImageStack::new((0..32).collect(), Dims::new(4, 4, 2), BitDepth::Sixteen).unwrap();
        let back = read_stack_from(&write_stack_to(&stack)).unwrap();
        assert_eq!(back.dims(), Dims::new(4, 4, 2));
        assert_eq!(back.len(), 32);
        assert_eq!(back, stack);
    }

    #[test]
    fn max_value_survives() {
        let stack = ImageStack::new(vec![65535], Dims::plane(1, 1), BitDepth::Sixteen).unwrap();
        assert_eq!(read_stack_from(&write_stack_to(&stack)).unwrap().data(), &[65535]);
    }

    #[test]
    fn eight_bit_tag_written() {
        let stack = ImageStack::new(vec![1, 2, 3, 255], Dims::plane(2, 2), BitDepth::Eight).unwrap();
        let bytes = write_stack_to(&stack);
        let ifd = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let n = u16::from_le_bytes(bytes[ifd..ifd + 2].try_into().unwrap()) as usize;
        let bps = (0..n)
            .map(|i| ifd + 2 + 12 * i)
            .find(|&e| u16::from_le_bytes([bytes[e], bytes[e + 1]]) == TAG_BITS_PER_SAMPLE)
            .map(|e| u16::from_le_bytes([bytes[e + 8], bytes[e + 9]]))
            .unwrap();
        assert_eq!(bps, 8);
        assert_eq!(read_stack_from(&bytes).unwrap(), stack);
    }

    #[test]
    fn depth_five_gives_five_pages() {
        let stack = ImageStack::filled(Dims::new(3, 2, 5), BitDepth::Sixteen, 9).unwrap();
        let bytes = write_stack_to(&stack);
        let r = Reader { bytes: &bytes, order: Order::Little };
        let mut pages = 0;
        let mut next = r.u32(4).unwrap() as usize;
        while next != 0 {
            pages += 1;
            let n = r.u16(next).unwrap() as usize;
            next = r.u32(next + 2 + 12 * n).unwrap() as usize;
        }
        assert_eq!(pages, 5);
    }

    #[test]
    fn voxel_size_roundtrip() {
        let stack = ImageStack::filled(Dims::new(2, 2, 3), BitDepth::Sixteen, 1)
            .unwrap()
            .with_voxel_size([5.26, 5.26, 5.0])
            .unwrap();
        assert_eq!(read_stack_from(&write_stack_to(&stack)).unwrap().voxel_size(), [5.26, 5.26, 5.0]);
    }

    #[test]
    fn rejects_compressed_and_rgb() {
        let mut b = handmade_tiff([0, 1]);
        // compression entry is the 4th: value field at 14 + 3*12 + 8
        let comp = 14 + 3 * 12 + 8;
        b[comp] = 5;
        assert!(matches!(read_stack_from(&b), Err(Error::UnsupportedFormat(_))));

        let mut b = handmade_tiff([0, 1]);
        let bps_count = 14 + 2 * 12 + 4;
        b[bps_count] = 3;
        assert!(read_stack_from(&b).is_err());
    }

    #[test]
    fn rejects_truncated() {
        let b = handmade_tiff([0, 1]);
        assert!(matches!(read_stack_from(&b[..20]), Err(Error::CorruptFile(_))));
        assert!(matches!(read_stack_from(b"PK\x03\x04xxxx"), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn big_endian_is_read() {
        let mut b = Vec::new();
        b.extend_from_slice(b"MM");
        b.extend_from_slice(&42u16.to_be_bytes());
        b.extend_from_slice(&10u32.to_be_bytes());
        b.extend_from_slice(&[0x01, 0x00]); // strip at 8
        let entries: [(u16, u16, u32, u32); 6] =
            [(256, 4, 1, 1), (257, 4, 1, 1), (258, 3, 1, 16), (259, 3, 1, 1), (273, 4, 1, 8), (279, 4, 1, 2)];
        b.extend_from_slice(&(entries.len() as u16).to_be_bytes());
        for (tag, typ, count, value) in entries {
            b.extend_from_slice(&tag.to_be_bytes());
            b.extend_from_slice(&typ.to_be_bytes());
            b.extend_from_slice(&count.to_be_bytes());
            if typ == 3 {
                b.extend_from_slice(&(value as u16).to_be_bytes());
                b.extend_from_slice(&[0, 0]);
            } else {
                b.extend_from_slice(&value.to_be_bytes());
            }
        }
        b.extend_from_slice(&[0, 0, 0, 0]);
        assert_eq!(read_stack_from(&b).unwrap().data(), &[256]);
    }

    proptest! {
        #[test]
        fn write_read_identity(w in 1usize..9, h in 1usize..9, d in 1usize..4, eight in any::<bool>(), seed in any::<u64>()) {
            let depth = if eight { BitDepth::Eight } else { BitDepth::Sixteen };
            let rng = crate::rng::CounterRng::new(seed, 0);
            let dims = Dims::new(w, h, d);
            let data: Vec<u16> = (0..dims.len())
                .map(|i| rng.below(i as u64, u64::from(depth.max_value()) + 1) as u16)
                .collect();
            let stack = ImageStack::new(data, dims, depth).unwrap();
            let back = read_stack_from(&write_stack_to(&stack)).unwrap();
            prop_assert_eq!(back, stack);
        }
    }
}
