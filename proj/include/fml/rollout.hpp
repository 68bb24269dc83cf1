#pragma once

#include "fml/model.hpp"
#include "fml/modal.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fml {

class StepSchedule {
public:
	enum class Kind { fixed, doubling, explicit_list };

	/// `steps` lags of size lag.
	static StepSchedule fixed(double lag, int steps);
	/// start, 2 start, 4 start, ... capped at `cap`, until the elapsed time reaches t_end.
	static StepSchedule doubling(double start, double cap, double t_end);
	static StepSchedule explicit_list(std::vector<double> lags);
	/// `fixed:<lag>:<steps>`, `doubling:<start>:<cap>[:<t_end>]` or `list:<l1>,<l2>,...`.
	static StepSchedule parse(const std::string& text, double default_t_end = 1e5);

	Kind kind() const { return kind_; }
	const std::vector<double>& lags() const { return lags_; }

private:
	Kind kind_ = Kind::fixed;
	std::vector<double> lags_;
};

struct PredictionResult {
	Vector times;
	Matrix states;                    ///< one row per time, raw coordinates
	std::optional<Matrix> reference;  ///< aligned with states
	std::vector<std::string> names;

	void write_csv(const std::filesystem::path& path) const;
};

/// u_{k+1} = F(u_k); fixed-lag models without memory.
PredictionResult predict_fixed(const ModelBundle& model, const RowVector& u0, int steps);
/// u_{k+1} = F(u_k, lag_k). Lags outside the trained range are reported on
/// `warnings` (or stderr when null) but still applied.
PredictionResult predict_varied(const ModelBundle& model, const RowVector& u0, const StepSchedule& schedule,
                                std::vector<std::string>* warnings = nullptr);
/// Seeds (M + 1 rows, oldest first) are copied verbatim, then the memory
/// recursion runs for `steps` more states.
PredictionResult predict_memory(const ModelBundle& model, const Matrix& seeds, int steps);
/// Projects the nodal IC onto the basis, predicts the coefficients and maps
/// every step back to the nodes.
PredictionResult rollout_modal(const ModelBundle& model, const Basis& basis, const Matrix& nodal_u0, int steps,
                               int channels = 1);

struct StepMetrics {
	Vector l2;
	Vector rel_l2;
	Vector linf;

	double mean_l2() const { return l2.mean(); }
	double mean_rel_l2() const { return rel_l2.mean(); }
	double mean_linf() const { return linf.mean(); }
};

StepMetrics metrics(const Matrix& pred, const Matrix& ref);
/// Per-step average over trajectories; all must have the same length.
StepMetrics aggregate(const std::vector<StepMetrics>& runs);

void write_metrics_csv(const std::filesystem::path& path, const Vector& times, const StepMetrics& m);

} // namespace fml
