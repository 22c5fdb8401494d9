use crate::codec::{CodecId, CodecResult};
use crate::error::{Error, Result};
use crate::imgio::{BitDepth, ImageStack};

/// `round(v·255/65535)`. The ratio is never exactly half an integer, so the
/// half-to-even rule reduces to plain rounding.
#[inline]
pub fn to_8(v: u16) -> u16 {
    ((u32::from(v) * 510 + 65535) / 131_070) as u16
}

pub fn downsample_16_to_8(stack: &ImageStack) -> Result<CodecResult> {
    if stack.bit_depth() != BitDepth::Sixteen {
        return Err(Error::WrongBitDepth { expected: 16, actual: stack.bit_depth().bits() });
    }
    let data = stack.data().iter().map(|&v| to_8(v)).collect();
    let decoded = ImageStack::new(data, stack.dims(), BitDepth::Eight)?.with_voxel_size(stack.voxel_size())?;
    let bytes = decoded.byte_len();
    Ok(CodecResult::new(stack, decoded, bytes, CodecId::Bit8))
}

/// `v → 257·v`, so 255 maps to 65535.
pub fn upsample_8_to_16(stack: &ImageStack) -> Result<ImageStack> {
    if stack.bit_depth() != BitDepth::Eight {
        return Err(Error::WrongBitDepth { expected: 8, actual: stack.bit_depth().bits() });
    }
    let data = stack.data().iter().map(|&v| v * 257).collect();
    ImageStack::new(data, stack.dims(), BitDepth::Sixteen)?.with_voxel_size(stack.voxel_size())
}
