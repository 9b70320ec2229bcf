"""Channel-wise activation compression."""

from memwall.codec.bench import (
    CORPUS_SHAPES,
    BenchRow,
    SyntheticActivation,
    bench_corpus,
    bench_tensor,
    gradient_fidelity,
    synthetic_activation,
    verify_bounds,
)
from memwall.codec.blocks import BlockPartition, csr_decode, csr_encode, partition_blocks
from memwall.codec.huffman import huffman_decode, huffman_encode
from memwall.codec.lorenzo import (
    LorenzoBlock,
    LorenzoPredictor,
    lorenzo_compress_block,
    lorenzo_decompress_block,
)
from memwall.codec.model import CodecModel, KindCalibration
from memwall.codec.quantize import (
    QuantizedChannel,
    dequantize_channel,
    half_step,
    quantize_channel,
)
from memwall.codec.tensor import (
    HEADER_BYTES,
    ActivationTensor,
    ChannelClass,
    ChannelClassification,
    CodecConfig,
    CompressedTensor,
    classify_channels,
    compress_tensor,
    decompress_tensor,
)

__all__ = [
    # Tensor codec
    "HEADER_BYTES",
    "ActivationTensor",
    "ChannelClass",
    "ChannelClassification",
    "CodecConfig",
    "CompressedTensor",
    "classify_channels",
    "compress_tensor",
    "decompress_tensor",
    # Components
    "BlockPartition",
    "LorenzoBlock",
    "LorenzoPredictor",
    "QuantizedChannel",
    "csr_decode",
    "csr_encode",
    "dequantize_channel",
    "half_step",
    "huffman_decode",
    "huffman_encode",
    "lorenzo_compress_block",
    "lorenzo_decompress_block",
    "partition_blocks",
    "quantize_channel",
    # Planner calibration and bench
    "CORPUS_SHAPES",
    "BenchRow",
    "CodecModel",
    "KindCalibration",
    "SyntheticActivation",
    "bench_corpus",
    "bench_tensor",
    "gradient_fidelity",
    "synthetic_activation",
    "verify_bounds",
]
