"""
Test suite for constants and validation ranges.

This module tests the enums, fixed column orders and validation helpers
to ensure they cover all expected use cases.
"""

import pytest

from src.core.constants import (
    # Enums
    Kpi, Scenario, AnomalyShape, LearnerKind, SessionClass,

    # Choice helpers
    get_valid_kpis, get_valid_scenarios, get_valid_learners,

    # Validation functions
    validate_kpi_value, validate_mos_value, kpi_range_message,

    # Column orders
    KPI_NAMES, TRACE_COLUMNS, FEATURE_NAMES, FEATURE_CSV_COLUMNS,
    FEATURE_DISPLAY_NAMES, SWEEP_CSV_COLUMNS, CURVE_CSV_COLUMNS,

    # Structural constants
    PATTERN_LENGTH, BOTTLENECK_WIDTH, MIN_MOS_SAMPLES, NODE_HISTOGRAM_EDGES,
    CSV_FLOAT_FORMAT, MOS_MIN, MOS_MAX,

    # Error messages
    VALIDATION_ERROR_MESSAGES
)


class TestEnums:
    """Test enum values and their helper lists."""

    def test_kpi_enum_values(self):
        """Test that Kpi has the four radio KPIs in CSV order."""
        assert [kpi.value for kpi in Kpi] == ["rsrp", "rsrq", "snr", "prb"]
        assert get_valid_kpis() == KPI_NAMES

    def test_scenario_and_shapes(self):
        """Test scenario tags and anomaly shapes."""
        assert sorted(get_valid_scenarios()) == ["anomalous", "normal"]
        assert {shape.value for shape in AnomalyShape} == {"late_fade", "early_fade", "oscillation"}
        assert Scenario.NORMAL == "normal"

    def test_learner_kinds(self):
        """Test learner kinds accepted by the predictor."""
        assert sorted(get_valid_learners()) == ["boosted", "forest", "tree"]
        assert LearnerKind("forest") is LearnerKind.FOREST

    def test_session_classes(self):
        """Test class names used by root-cause curves."""
        assert SessionClass.ABNORMAL.value == "abnormal"


class TestColumnOrders:
    """Test fixed CSV column orders."""

    def test_trace_columns(self):
        """Test the trace CSV header."""
        assert TRACE_COLUMNS == ["session_id", "t", "rsrp", "rsrq", "snr", "prb", "mos"]

    def test_feature_names(self):
        """Test the 14 feature names: 2 temporal plus 4 KPIs x 3 variants."""
        assert len(FEATURE_NAMES) == 14
        assert FEATURE_NAMES[:2] == ["sess_time", "block_len"]
        assert FEATURE_NAMES[2:5] == ["rsrp_c", "rsrp_b", "rsrp_s"]
        assert FEATURE_CSV_COLUMNS[0] == "session_id"
        assert FEATURE_CSV_COLUMNS[-1] == "mos"

    def test_every_feature_has_display_name(self):
        """Test that display names cover every feature."""
        assert set(FEATURE_NAMES) <= set(FEATURE_DISPLAY_NAMES)
        assert FEATURE_DISPLAY_NAMES["prb_s"] == "Session PRB"

    def test_export_columns(self):
        """Test sweep and curve export headers."""
        assert SWEEP_CSV_COLUMNS == ["threshold", "precision", "recall", "f1"]
        assert CURVE_CSV_COLUMNS == ["t", "class", "mean", "lo", "hi"]


class TestStructuralConstants:
    """Test model dimensions and formats."""

    def test_pattern_dimensions(self):
        """Test pattern length, bottleneck width and eligibility threshold."""
        assert PATTERN_LENGTH == 15
        assert BOTTLENECK_WIDTH == 6
        assert MIN_MOS_SAMPLES == 12

    def test_float_format(self):
        """Test six fractional digits in CSV cells."""
        assert CSV_FLOAT_FORMAT % 1.0 == "1.000000"

    def test_histogram_edges_span_mos_scale(self):
        """Test that node histograms cover [1, 5]."""
        assert NODE_HISTOGRAM_EDGES[0] == MOS_MIN
        assert NODE_HISTOGRAM_EDGES[-1] == MOS_MAX


class TestValidationFunctions:
    """Test KPI and MOS range checks."""

    @pytest.mark.parametrize("kpi,value,expected", [
        ("rsrp", -140.0, True),
        ("rsrp", -44.0, True),
        ("rsrp", -30.0, False),
        ("rsrq", -19.5, True),
        ("rsrq", -2.0, False),
        ("snr", 40.0, True),
        ("snr", -21.0, False),
        ("prb", 0.0, True),
        ("prb", -1.0, False),
        ("prb", 1e6, True),
        ("snr", None, True),
    ])
    def test_validate_kpi_value(self, kpi, value, expected):
        """Test inclusive KPI ranges and absent values."""
        assert validate_kpi_value(kpi, value) is expected

    @pytest.mark.parametrize("value,expected", [(1.0, True), (5.0, True), (0.99, False), (5.01, False)])
    def test_validate_mos_value(self, value, expected):
        """Test the 1-5 MOS scale."""
        assert validate_mos_value(value) is expected

    def test_range_messages(self):
        """Test rejection reason wording."""
        assert kpi_range_message("rsrp") == "rsrp out of [-140,-44]"
        assert kpi_range_message("prb") == "prb must be >= 0"
        assert VALIDATION_ERROR_MESSAGES["mos_range"] == "mos out of [1,5]"
