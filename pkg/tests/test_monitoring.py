from monitoring import RunMonitor


def test_record_and_summary():
    monitor = RunMonitor()
    monitor.record("a_tl", paths=1000, collisions=2500, cutoffs=0, seconds=0.5)
    monitor.record("nac_tl", paths=1000, collisions=4000, cutoffs=3, seconds=0.7)
    monitor.record("nac_tl", paths=1000, collisions=4100, cutoffs=1, seconds=0.7)
    monitor.point_done()

    stats = monitor.to_dict()
    assert stats["total_paths"] == 3000
    assert stats["total_collisions"] == 10600
    assert stats["total_cutoffs"] == 4
    assert stats["points"] == 1
    assert stats["by_procedure"]["nac_tl"]["paths"] == 2000
    assert monitor.cutoff_fraction("nac_tl") == 0.002
    assert monitor.cutoff_fraction("natl_ne") == 0.0
    assert "Paths: 3,000" in monitor.get_summary()
