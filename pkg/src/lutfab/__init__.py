"""Toolchain for mapping quantized CNNs onto a simulated FPGA LUT fabric:
LUT constant-multiplier generation, bit-exact streaming dataflow simulation,
structural netlist emission, and roofline/resource/throughput models.
"""

from .analyzer import (
    DeviceModel,
    RooflineReport,
    attainable,
    emit_roofline_csv,
    get_device,
    layer_intensity,
    load_devices,
    lut_peak_performance,
    network_intensity,
    peak_performance,
)
from .lutgen import (
    LutBank,
    LutMultiplier,
    ResourceEstimate,
    build_lut_bank,
    effective_lut_count,
    emit_netlist,
    estimate_layer_resources,
    gen_lut_inits,
    lut6_2_eval,
    lut6_eval,
    lut_count,
    lut_multiply,
    make_multiplier,
)
from .model_io import (
    LayerSpec,
    ModelFormatError,
    NetworkManifest,
    load_network,
    manifest_equal,
    save_network,
    validate_graph,
)
from .quantization import (
    AffineSpec,
    QuantParams,
    ThresholdUnit,
    apply_thresholds,
    calibrate,
    dequantize,
    fold_to_thresholds,
    quantize,
)
from .simulator import (
    BoundedFifo,
    CycleReport,
    DeadlockError,
    StreamLengthError,
    conv_generator,
    cycle_model,
    mac_kernel,
    min_fifo_capacities,
    run_network,
    run_network_pipelined,
)

__version__ = "0.1.0"
