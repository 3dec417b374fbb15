# Tests for the multilevel filter engine, the experiment models and the harness
