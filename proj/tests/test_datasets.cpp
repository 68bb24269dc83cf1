#include "fml/datasets.hpp"
#include "fml/errors.hpp"
#include "fml/simulate.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>

using namespace fml;
using fml::testing::random_matrix;
using fml::testing::scratch_dir;

namespace {

Trajectory ramp(int length, double lag, double offset = 0.0, int width = 2)
{
	Trajectory t;
	t.times.resize(length);
	t.states.resize(length, width);
	for (int k = 0; k < length; ++k) {
		t.times(k) = k * lag;
		for (int c = 0; c < width; ++c)
			t.states(k, c) = offset + 10.0 * c + k;
	}
	return t;
}

TrajectorySet set_of(std::vector<Trajectory> ts)
{
	TrajectorySet s;
	s.trajectories = std::move(ts);
	return s;
}

// True when a and b are rows k, k+1 of some trajectory.
bool adjacent_in(const TrajectorySet& ts, const RowVector& a, const RowVector& b)
{
	for (const auto& t : ts.trajectories)
		for (Eigen::Index k = 0; k + 1 < t.length(); ++k)
			if (t.states.row(k) == a && t.states.row(k + 1) == b)
				return true;
	return false;
}

bool contiguous_in(const TrajectorySet& ts, const RowVector& window, int width)
{
	const Eigen::Index len = window.size() / width;
	for (const auto& t : ts.trajectories)
		for (Eigen::Index k = 0; k + len <= t.length(); ++k) {
			bool ok = true;
			for (Eigen::Index s = 0; s < len && ok; ++s)
				ok = window.segment(s * width, width) == t.states.row(k + s);
			if (ok)
				return true;
		}
	return false;
}

void write_text(const std::filesystem::path& p, const std::string& text)
{
	std::ofstream out(p);
	out << text;
}

} // namespace

TEST_SUITE("datasets")
{
	TEST_CASE("segment_fixed counts and membership")
	{
		CHECK(segment_fixed(set_of({ramp(5, 0.1)})).size() == 4);
		const TrajectorySet ts = set_of({ramp(5, 0.1), ramp(5, 0.1, 100), ramp(2, 0.1, 200)});
		const PairSet p = segment_fixed(ts);
		CHECK(p.size() == 9);
		CHECK(p.lag == doctest::Approx(0.1));
		for (Eigen::Index j = 0; j < p.size(); ++j)
			CHECK(adjacent_in(ts, p.inputs.row(j), p.outputs.row(j)));

		TrajectorySet bad = set_of({ramp(5, 0.1), ramp(5, 0.1), ramp(4, 0.1)});
		bad.trajectories[2].times(3) = 0.35;
		try {
			segment_fixed(bad);
			FAIL("expected DataError");
		} catch (const DataError& e) {
			CHECK(std::string(e.what()).find('2') != std::string::npos);
		}
	}

	TEST_CASE("segment_osg")
	{
		Trajectory t;
		t.times = Vector(3);
		t.times << 0.0, 0.1, 0.4;
		t.states = Matrix::Zero(3, 1);
		const OsgPairSet p = segment_osg(set_of({t}));
		REQUIRE(p.size() == 2);
		CHECK(p.lags(0, 0) == doctest::Approx(0.1));
		CHECK(p.lags(1, 0) == doctest::Approx(0.3));
		CHECK(p.lag_min <= p.lags.minCoeff());
		CHECK(p.lag_max >= p.lags.maxCoeff());

		const auto lags = sample_lags_loguniform(-4.5, 2.5, 10000, 3);
		const auto [lo, hi] = std::minmax_element(lags.begin(), lags.end());
		CHECK(*lo >= std::pow(10.0, -4.5));
		CHECK(*hi <= std::pow(10.0, 2.5));
	}

	TEST_CASE("make_bursts")
	{
		const TrajectorySet ts = set_of({ramp(30, 0.1), ramp(30, 0.1, 1000)});
		const BurstSet plain = make_bursts(ts, 0, 0, 5, 1);
		CHECK(plain.window_length() == 2);
		CHECK(plain.windows.cols() == 4);

		const BurstSet b = make_bursts(ts, 10, 10, 4, 2);
		CHECK(b.window_length() == 22);
		CHECK(b.size() == 8);
		for (Eigen::Index j = 0; j < b.size(); ++j)
			CHECK(contiguous_in(ts, b.windows.row(j), 2));

		// without replacement: distinct offsets inside each trajectory
		const BurstSet many = make_bursts(ts, 0, 0, 29, 3);
		std::vector<double> firsts;
		for (Eigen::Index j = 0; j < 29; ++j)
			firsts.push_back(many.windows(j, 0));
		std::sort(firsts.begin(), firsts.end());
		CHECK(std::adjacent_find(firsts.begin(), firsts.end()) == firsts.end());

		const BurstSet again = make_bursts(ts, 10, 10, 4, 2);
		CHECK((again.windows.array() == b.windows.array()).all());
		CHECK_THROWS_AS(make_bursts(set_of({ramp(5, 0.1)}), 2, 2, 1, 0), DataError);
	}

	TEST_CASE("normalization")
	{
		Matrix c = Matrix::Constant(6, 2, 3.0);
		const NormStats cs = normalize_fit(c);
		CHECK(normalize_apply(cs, c).isZero(0.0));

		std::mt19937_64 rng(4);
		const Matrix x = random_matrix(50, 3, rng, -7, 9);
		const NormStats s = normalize_fit(x);
		CHECK((normalize_invert(s, normalize_apply(s, x)) - x).cwiseAbs().maxCoeff() < 1e-12);

		std::normal_distribution<double> n01;
		Matrix g(20000, 2);
		for (Eigen::Index i = 0; i < g.size(); ++i)
			g.data()[i] = n01(rng);
		const NormStats gs = normalize_fit(g);
		CHECK(gs.mean.cwiseAbs().maxCoeff() < 0.05);
		CHECK((gs.std.array() - 1.0).abs().maxCoeff() < 0.05);

		NormStats ls = gs;
		Matrix lags(3, 1);
		lags << 1e-3, 1e-1, 10.0;
		normalize_fit_lags(ls, lags);
		CHECK(ls.varied_lag);
		CHECK(ls.lag_mean == doctest::Approx(-1.0));
	}

	TEST_CASE("multiplicative noise")
	{
		const TrajectorySet ts = generate_trajectories(SystemKind::pendulum, 3, 20, 0.02, 1);
		const TrajectorySet same = add_multiplicative_noise(ts, 0.0, 5);
		for (std::size_t i = 0; i < ts.size(); ++i)
			CHECK((same.trajectories[i].states.array() == ts.trajectories[i].states.array()).all());

		const TrajectorySet noisy = add_multiplicative_noise(ts, 0.1, 5);
		for (std::size_t i = 0; i < ts.size(); ++i) {
			const Matrix& a = ts.trajectories[i].states;
			const Matrix& b = noisy.trajectories[i].states;
			for (Eigen::Index k = 0; k < a.size(); ++k)
				if (a.data()[k] != 0.0)
					CHECK(std::abs(b.data()[k] / a.data()[k] - 1.0) <= 0.1 + 1e-15);
		}

		Trajectory ones;
		ones.times = Vector::LinSpaced(100000, 0.0, 1.0);
		ones.states = Matrix::Ones(100000, 1);
		const TrajectorySet e = add_multiplicative_noise(set_of({ones}), 0.5, 6);
		CHECK(std::abs(e.trajectories[0].states.mean() - 1.0) < 1e-2);
		CHECK_THROWS_AS(add_multiplicative_noise(ts, -0.1, 0), DomainError);
	}

	TEST_CASE("train_test_split")
	{
		std::vector<Trajectory> ten;
		for (int i = 0; i < 10; ++i)
			ten.push_back(ramp(3, 0.1, 100.0 * i));
		const TrajectorySet ts = set_of(ten);
		CHECK(train_test_split(ts, 0.0, 1).second.empty());
		const auto [train, test] = train_test_split(ts, 0.2, 1);
		CHECK(train.size() == 8);
		CHECK(test.size() == 2);
		std::vector<double> seen;
		for (const auto* part : {&train, &test})
			for (const auto& t : part->trajectories)
				seen.push_back(t.states(0, 0));
		std::sort(seen.begin(), seen.end());
		std::vector<double> want;
		for (int i = 0; i < 10; ++i)
			want.push_back(100.0 * i);
		CHECK(seen == want);
		CHECK_THROWS_AS(train_test_split(ts, 1.0, 0), DomainError);
		CHECK_THROWS_AS(train_test_split(ts, -0.1, 0), DomainError);
	}

	TEST_CASE("trajectory files")
	{
		const auto dir = scratch_dir("datasets_io");
		TrajectorySet ts = generate_trajectories(SystemKind::lorenz, 2, 10, 0.01, 3);
		ts.names = {"u1", "u2", "u3"};
		write_trajectory_set(dir, "traj", ts);
		const TrajectorySet back = load_trajectories(dir / "manifest.txt");
		REQUIRE(back.size() == 2);
		CHECK(back.width() == 3);
		for (std::size_t i = 0; i < 2; ++i) {
			CHECK((back.trajectories[i].states - ts.trajectories[i].states).cwiseAbs().maxCoeff() == 0.0);
			CHECK((back.trajectories[i].times - ts.trajectories[i].times).cwiseAbs().maxCoeff() == 0.0);
		}

		write_text(dir / "dec.csv", "t,a\n0,1\n0.2,2\n0.1,3\n");
		try {
			read_trajectory_csv(dir / "dec.csv");
			FAIL("expected ParseError");
		} catch (const ParseError& e) {
			CHECK(std::string(e.what()).find(":4") != std::string::npos);
		}
		write_text(dir / "ragged.csv", "t,a,b\n0,1,2\n0.1,3\n");
		CHECK_THROWS_AS(read_trajectory_csv(dir / "ragged.csv"), ParseError);
		write_text(dir / "m_missing.txt", "# comment\nnope.csv\n");
		CHECK_THROWS_AS(load_trajectories(dir / "m_missing.txt"), ParseError);
		CHECK_THROWS_AS(load_trajectories(dir / "absent.txt"), ParseError);

		Matrix mesh(3, 1);
		mesh << 0.5, 1.0, 1.5;
		write_mesh_csv(dir / "mesh.csv", mesh);
		CHECK(read_mesh_csv(dir / "mesh.csv") == mesh);
	}

	TEST_CASE("triples files expand to two-row trajectories")
	{
		const auto dir = scratch_dir("datasets_triples");
		OsgPairSet p;
		p.inputs = Matrix::Ones(3, 2);
		p.outputs = 2.0 * Matrix::Ones(3, 2);
		p.lags = Matrix(3, 1);
		p.lags << 0.1, 0.2, 0.4;
		write_triples_csv(dir / "triples.csv", p, {"u1", "u2"});
		write_text(dir / "manifest.txt", "triples.csv\n");
		const TrajectorySet ts = load_trajectories(dir / "manifest.txt");
		REQUIRE(ts.size() == 3);
		const OsgPairSet back = segment_osg(ts);
		CHECK((back.lags - p.lags).cwiseAbs().maxCoeff() < 1e-15);
		CHECK(back.outputs == p.outputs);
	}

	TEST_CASE("partial observation")
	{
		const TrajectorySet ts = generate_trajectories(SystemKind::pendulum, 2, 5, 0.02, 0);
		const TrajectorySet u1 = ts.select_components({0});
		CHECK(u1.width() == 1);
		CHECK(u1.trajectories[1].states.col(0) == ts.trajectories[1].states.col(0));
		CHECK_THROWS_AS(ts.select_components({2}), DomainError);
	}
}
