class Activation:
    TANH = "tanh"
    RELU = "relu"


class Precision:
    FLOAT64 = "float64"
    FLOAT32 = "float32"


class EndpointSource:
    PRIOR = "prior"
    NOISE = "noise"
    PROTOTYPE_MEAN = "prototype_mean"


class BinaryLoss:
    LOGISTIC = "logistic"
    DEVIATION = "deviation"


class Pooling:
    MEAN = "mean"
    FLATTEN = "flatten"


class UnseenKind:
    HELD_OUT_MODE = "held_out_mode"
    LARGE_OFFSET = "large_offset"
    TWO_SIDED_OFFSET = "two_sided_offset"


class Split:
    TRAIN_NORMAL = "train-normal"
    TRAIN_ANOMALY = "train-anomaly"
    TEST = "test"


class Term:
    """Loss terms and scoring heads that can be disabled for ablations."""

    FLOW = "flow"
    MIMR = "mimr"
    GLOBAL = "g"
    LOCAL = "a"
    NORMAL = "n"
    RESIDUAL = "r"

    ALL = (FLOW, MIMR, GLOBAL, LOCAL, NORMAL, RESIDUAL)
