import numpy as np
import pytest

from aerial_radio_map import geo, kriging
from aerial_radio_map.exceptions import (
    DataError,
    InsufficientData,
    NoNeighbors,
    SingularSystem,
)
from aerial_radio_map.kriging import GridSpec, KrigingMode, Variogram
from aerial_radio_map.measurements import MeasurementSet
from aerial_radio_map.propagation import PropagationConfig
from aerial_radio_map.spatial_stats import CorrelationModel3D, ShadowingStats

ORIGIN = geo.GeoLocation(35.7275, -78.6960, 0.0)


def make_pool(east, north, alt, rsrp, sample_id=None):
    locations = geo.offset_locations(ORIGIN, east, north, alt)
    n = len(locations)
    return MeasurementSet(
        t_s=np.arange(n, dtype=float),
        lat_deg=locations.lat_deg,
        lon_deg=locations.lon_deg,
        alt_m=locations.alt_m,
        rsrp_dbm=np.asarray(rsrp, dtype=float),
        flight_id=np.full(n, "f", dtype=object),
        height_label_m=locations.alt_m.copy(),
        sample_id=(
            np.arange(n, dtype=np.int64) if sample_id is None
            else np.asarray(sample_id, dtype=np.int64)
        ),
        calibrated=True,
    )


@pytest.fixture
def variogram():
    return Variogram(
        CorrelationModel3D(
            a=0.3, b1=0.02815, b2=0.2474, d_cor_m=11.24, sigma_w2=47.61
        )
    )


@pytest.fixture
def grid_pool():
    rng = np.random.default_rng(2)
    east, north = np.meshgrid(np.arange(0.0, 100.0, 5.0),
                              np.arange(0.0, 100.0, 5.0))
    east = east.ravel()
    north = north.ravel()
    alt = np.where(np.arange(east.size) % 2 == 0, 30.0, 50.0)
    rsrp = -80.0 + 0.05 * east - 0.03 * north + rng.normal(0, 1, east.size)
    return make_pool(east, north, alt, rsrp)


@pytest.fixture
def trend():
    bs = geo.GeoLocation(35.7275, -78.6960, 10.0)
    return kriging.PathLossTrend(PropagationConfig(), bs)


class TestVariogram:
    def test_zero_at_origin(self, variogram):
        assert variogram.gamma(0.0, 0.0) == 0.0

    def test_approaches_sill(self, variogram):
        assert variogram.gamma(1000.0, 5000.0) == pytest.approx(47.61)

    def test_rejects_negative_nugget(self, variogram):
        with pytest.raises(DataError):
            Variogram(variogram.model, nugget=-1.0)

    def test_matrix_is_symmetric(self, variogram, grid_pool):
        locations = grid_pool.locations.take(np.arange(10))
        matrix = variogram.matrix(locations)
        assert matrix == pytest.approx(matrix.T)
        assert np.diag(matrix) == pytest.approx(np.zeros(10), abs=1e-9)

    def test_pointwise_form(self, variogram):
        a = ORIGIN.with_altitude(30.0)
        b = geo.offset_locations(ORIGIN, [10.0], [0.0], 50.0)[0]
        assert kriging.semivariogram(variogram, a, b) == pytest.approx(
            float(variogram.gamma(20.0, 10.0)), rel=1e-6
        )


class TestNeighbors:
    def test_nearest_first_with_radius(self):
        pool = make_pool(
            [30.0, 10.0, 20.0, 500.0], [0.0] * 4, 30.0, [0.0] * 4
        )
        target = ORIGIN.with_altitude(30.0)
        neighbors = kriging.select_neighbors(target, pool, r0_m=100.0)
        assert neighbors.indices.tolist() == [1, 2, 0]

    def test_limit_and_tie_break_on_sample_id(self):
        pool = make_pool(
            [10.0, 10.0, 10.0], [0.0, 0.0, 0.0], 30.0, [0.0] * 3,
            sample_id=[7, 3, 5],
        )
        target = ORIGIN.with_altitude(30.0)
        neighbors = kriging.select_neighbors(target, pool, r0_m=50, m_max=2)
        assert neighbors.sample_ids.tolist() == [3, 5]

    def test_none_in_radius(self):
        pool = make_pool([500.0], [0.0], 30.0, [0.0])
        with pytest.raises(NoNeighbors):
            kriging.select_neighbors(ORIGIN.with_altitude(30.0), pool, 100)

    def test_index_agrees_with_brute_force(self, grid_pool):
        index = kriging.PoolIndex(grid_pool)
        target = geo.offset_locations(ORIGIN, [42.0], [57.0], 40.0)[0]
        brute = kriging.select_neighbors(target, grid_pool, 30.0, 25)
        indexed = index.select(target, 30.0, 25)
        assert indexed.sample_ids.tolist() == brute.sample_ids.tolist()

    @pytest.mark.parametrize("r0_m, m_max", [(0.0, 5), (10.0, 0)])
    def test_invalid_limits(self, grid_pool, r0_m, m_max):
        with pytest.raises(DataError):
            kriging.select_neighbors(ORIGIN, grid_pool, r0_m, m_max)


class TestSolveKriging:
    def test_weights_sum_to_one(self, variogram, grid_pool):
        locations = grid_pool.locations.take(np.arange(12))
        target = geo.offset_locations(ORIGIN, [7.0], [3.0], 40.0)[0]
        solution = kriging.solve_kriging(
            variogram, target, locations, grid_pool.rsrp_dbm[:12]
        )
        assert solution.weights.sum() == pytest.approx(1.0)
        assert solution.variance >= 0

    def test_exact_at_sample(self, variogram, grid_pool):
        locations = grid_pool.locations.take(np.arange(12))
        values = grid_pool.rsrp_dbm[:12]
        solution = kriging.solve_kriging(
            variogram, locations[4], locations, values
        )
        assert solution.predicted_dbm == pytest.approx(values[4], abs=1e-8)
        assert solution.variance == pytest.approx(0.0, abs=1e-6)

    def test_single_neighbor(self, variogram):
        locations = geo.offset_locations(ORIGIN, [5.0], [0.0], 30.0)
        solution = kriging.solve_kriging(
            variogram, ORIGIN.with_altitude(30.0), locations, [-77.0]
        )
        assert solution.weights.tolist() == pytest.approx([1.0])
        assert solution.predicted_dbm == pytest.approx(-77.0)

    def test_duplicates_need_a_nugget(self, variogram):
        locations = geo.offset_locations(
            ORIGIN, [5.0, 5.0, 20.0], [0.0, 0.0, 0.0], 30.0
        )
        target = ORIGIN.with_altitude(30.0)
        with pytest.raises(SingularSystem):
            kriging.solve_kriging(
                variogram, target, locations, [-70.0, -72.0, -75.0]
            )
        with_nugget = Variogram(variogram.model, nugget=0.5)
        solution = kriging.solve_kriging(
            with_nugget, target, locations, [-70.0, -72.0, -75.0]
        )
        assert solution.weights[0] == pytest.approx(solution.weights[1])
        assert solution.weights.sum() == pytest.approx(1.0)

    def test_no_neighbors(self, variogram):
        with pytest.raises(NoNeighbors):
            kriging.solve_kriging_system(np.zeros((0, 0)), np.zeros(0))

    def test_matches_dense_solve_on_random_instances(self, variogram):
        rng = np.random.default_rng(1000)
        cells = np.array(
            [(e, n, h) for e in range(40) for n in range(40)
             for h in (30.0, 50.0, 70.0)]
        )
        for _ in range(1000):
            m = int(rng.integers(1, 11))
            picked = cells[rng.choice(len(cells), size=m + 1, replace=False)]
            locations = geo.offset_locations(
                ORIGIN, 5.0 * picked[:, 0], 5.0 * picked[:, 1], picked[:, 2]
            )
            neighbors = locations.take(np.arange(m))
            gamma_nn = variogram.matrix(neighbors)
            gamma_0 = variogram.matrix(neighbors, locations.take([m]))[:, 0]
            weights, lagrange = kriging.solve_kriging_system(
                gamma_nn, gamma_0
            )
            dense = np.linalg.solve(
                np.block([
                    [gamma_nn, np.ones((m, 1))],
                    [np.ones((1, m)), np.zeros((1, 1))],
                ]),
                np.append(gamma_0, 1.0),
            )
            np.testing.assert_allclose(weights, dense[:m], rtol=0, atol=1e-8)
            assert lagrange == pytest.approx(dense[m], abs=1e-8)
            assert abs(weights.sum() - 1.0) < 1e-9


class TestKrigingPredictor:
    def test_fallback_uses_trend(self, variogram, grid_pool, trend):
        predictor = kriging.KrigingPredictor(
            variogram, grid_pool, r0_m=20.0, m_max=10, trend=trend
        )
        far = geo.offset_locations(ORIGIN, [1000.0], [1000.0], 30.0)
        prediction = predictor.predict(far)
        assert prediction.fallback.tolist() == [True]
        assert prediction.neighbor_count.tolist() == [0]
        assert prediction.predicted_dbm[0] == pytest.approx(trend(far)[0])

    def test_no_trend_no_fallback(self, variogram, grid_pool):
        predictor = kriging.KrigingPredictor(
            variogram, grid_pool, r0_m=20.0, m_max=10
        )
        far = geo.offset_locations(ORIGIN, [1000.0], [1000.0], 30.0)
        with pytest.raises(NoNeighbors):
            predictor.predict(far)

    def test_residual_mode_needs_trend(self, variogram, grid_pool):
        with pytest.raises(DataError):
            kriging.KrigingPredictor(
                variogram, grid_pool, mode=KrigingMode.RESIDUAL
            )

    def test_residual_mode_exact_at_samples(
        self, variogram, grid_pool, trend
    ):
        predictor = kriging.KrigingPredictor(
            variogram, grid_pool, r0_m=30.0, m_max=20,
            mode=KrigingMode.RESIDUAL, trend=trend,
        )
        targets = grid_pool.locations.take([3, 50])
        prediction = predictor.predict(targets)
        assert prediction.predicted_dbm == pytest.approx(
            grid_pool.rsrp_dbm[[3, 50]], abs=1e-6
        )

    def test_threads_do_not_change_results(self, variogram, grid_pool):
        predictor = kriging.KrigingPredictor(
            variogram, grid_pool, r0_m=30.0, m_max=20
        )
        targets = geo.offset_locations(
            ORIGIN, np.linspace(1, 90, 15), np.linspace(3, 80, 15), 40.0
        )
        single = predictor.predict(targets)
        threaded = predictor.predict(targets, threads=4)
        assert np.array_equal(single.predicted_dbm, threaded.predicted_dbm)

    def test_empty_pool(self, variogram, grid_pool):
        with pytest.raises(InsufficientData):
            kriging.KrigingPredictor(
                variogram, grid_pool.subset(np.array([], dtype=int))
            )


class TestCrossValidation:
    def test_deterministic_for_seed(self, variogram, grid_pool, trend):
        first = kriging.cross_validate(
            variogram, grid_pool, grid_pool, M=50, N0=20, r0_m=40.0,
            iterations=6, seed=9, trend=trend,
        )
        second = kriging.cross_validate(
            variogram, grid_pool, grid_pool, M=50, N0=20, r0_m=40.0,
            iterations=6, seed=9, threads=3, trend=trend,
        )
        assert np.array_equal(first.rmse, second.rmse)
        assert first.q25 <= first.median <= first.q75
        assert first.to_dict()["iterations"] == 6

    def test_needs_enough_pool(self, variogram, grid_pool):
        with pytest.raises(InsufficientData):
            kriging.cross_validate(
                variogram, grid_pool.subset(np.arange(10)), grid_pool,
                M=20, iterations=1,
            )

    def test_excluding_training_can_exhaust_targets(
        self, variogram, grid_pool
    ):
        with pytest.raises(InsufficientData):
            kriging.cross_validate(
                variogram, grid_pool, grid_pool, M=len(grid_pool) - 5,
                N0=10, iterations=1,
            )

    def test_sweep_covers_every_combination(self, variogram, grid_pool, trend):
        summaries = kriging.cross_validation_sweep(
            variogram, grid_pool, grid_pool, m_values=[10, 20],
            r0_values_m=[30.0, 60.0], N0=10, iterations=2, trend=trend,
        )
        assert [(s.r0_m, s.M) for s in summaries] == [
            (30.0, 10), (30.0, 20), (60.0, 10), (60.0, 20)
        ]

    def test_baseline_is_shadowing_deviation(self):
        stats = ShadowingStats(
            mean_db=-4.26, std_db=7.14, alpha=-2.13, nmse_gaussian=0.03,
            nmse_skewed=0.003, xi=0.0, omega=1.0,
        )
        assert kriging.baseline_rmse(stats) == 7.14


class TestGrid:
    def test_node_order(self):
        grid = GridSpec(0.0, 0.001, 0.001, 1.0, 1.002, 0.001, 30, 50, 20)
        locations = grid.locations()
        assert len(locations) == 2 * 3 * 2
        assert locations.alt_m[:6].tolist() == [30.0] * 6
        assert locations.lon_deg[:3] == pytest.approx([1.0, 1.001, 1.002])

    def test_rejects_bad_step(self):
        with pytest.raises(DataError):
            GridSpec(0, 1, 0, 0, 1, 1, 0, 1, 1)

    def test_radio_map_frame(self, variogram, grid_pool, trend):
        lat = grid_pool.lat_deg
        lon = grid_pool.lon_deg
        grid = GridSpec(
            lat.min(), lat.max(), (lat.max() - lat.min()) / 4 * (1 - 1e-9),
            lon.min(), lon.max(), (lon.max() - lon.min()) / 4 * (1 - 1e-9),
            30.0, 50.0, 20.0,
        )
        radio_map = kriging.generate_radio_map(
            variogram, grid_pool, grid, M=20, r0_m=40.0, trend=trend
        )
        frame = radio_map.to_frame()
        assert len(frame) == 50
        assert list(frame.columns) == [
            "lat_deg", "lon_deg", "alt_m", "predicted_dbm",
            "neighbor_count", "fallback_flag",
        ]
        assert frame["fallback_flag"].sum() == 0
