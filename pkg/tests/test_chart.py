import numpy as np
import pytest

from chart import ChartGenerator


@pytest.fixture
def charts(tmp_path):
    return ChartGenerator(tmp_path)


class TestVarianceChart:
    def test_writes_svg(self, charts, tmp_path):
        sigma2 = [0.5 * 0.9 ** t for t in range(10)]
        path = charts.variance_chart(range(10), sigma2, 'demo', lambda_theory=0.9, lambda_hat=0.9, r_squared=1.0)
        assert path.endswith('variance.svg')
        assert (tmp_path / 'variance.svg').read_text().lstrip().startswith('<?xml')

    def test_identical_data_identical_bytes(self, charts, tmp_path):
        sigma2 = [1.0, 0.5, 0.0]
        predicted = [np.nan, 0.6, 0.1]
        a = charts.variance_chart([0, 1, 2], sigma2, 'demo', predicted=predicted, filename='a.svg')
        b = charts.variance_chart([0, 1, 2], sigma2, 'demo', predicted=predicted, filename='b.svg')
        assert open(a, 'rb').read() == open(b, 'rb').read()

    def test_empty_rejected(self, charts):
        with pytest.raises(ValueError):
            charts.variance_chart([], [], 'demo')


class TestPolarCharts:
    def test_one_file_per_scale(self, charts, tmp_path):
        angles = np.arange(17) * (2 * np.pi / 17)
        accuracy = np.full((17, 3), 0.8)
        paths = charts.polar_accuracy_charts(angles, [1.0, 1.125, 1.25], accuracy, 'demo', baseline=accuracy / 2)
        assert [p.rsplit('/', 1)[-1] for p in paths] == [
            'robustness_scale_1.svg', 'robustness_scale_1.125.svg', 'robustness_scale_1.25.svg',
        ]

    def test_shape_checked(self, charts):
        with pytest.raises(ValueError):
            charts.polar_accuracy_charts([0.0, 1.0], [1.0], np.zeros((3, 1)), 'demo')

    def test_canprior_curve(self, charts, tmp_path):
        angles = np.arange(4) * (np.pi / 2)
        accuracy = np.full((4, 1), 0.9)
        plain = charts.polar_accuracy_charts(angles, [1.0], accuracy, 'demo', baseline=accuracy / 3, prefix='plain')
        both = charts.polar_accuracy_charts(
            angles, [1.0], accuracy, 'demo', baseline=accuracy / 3, canprior=accuracy / 2, prefix='both'
        )
        assert open(plain[0], 'rb').read() != open(both[0], 'rb').read()


class TestSweepHeatmap:
    def test_writes_svg(self, charts, tmp_path):
        path = charts.sweep_heatmap([1, 5, 10], [0.01, 0.1], np.array([[0.2, 0.3], [0.4, 0.5], [0.6, 0.7]]), 'demo')
        assert path.endswith('sweep.svg')
        assert (tmp_path / 'sweep.svg').exists()

    def test_shape_checked(self, charts):
        with pytest.raises(ValueError):
            charts.sweep_heatmap([1, 5], [0.01, 0.1], np.zeros((2, 3)), 'demo')
