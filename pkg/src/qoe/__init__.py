"""
Domain package: trace records, the synthetic generator and the pipeline stages.

Stages build on each other in order: trace_model, feature_pipeline,
pattern_recognizer, mos_predictor, anomaly_detector, explainer.
"""
