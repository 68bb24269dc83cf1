#include "fml/model.hpp"

#include "fml/errors.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace fml {

namespace fs = std::filesystem;

ModelKind parse_model_kind(const std::string& name)
{
	if (name == "resnet")
		return ModelKind::resnet;
	if (name == "gresnet")
		return ModelKind::gresnet;
	if (name == "osgnet")
		return ModelKind::osgnet;
	if (name == "dual_osgnet")
		return ModelKind::dual_osgnet;
	if (name == "pit_resnet" || name == "pit")
		return ModelKind::pit_resnet;
	throw ConfigError("unknown model kind '" + name + "'");
}

std::string to_string(ModelKind kind)
{
	switch (kind) {
	case ModelKind::resnet: return "resnet";
	case ModelKind::gresnet: return "gresnet";
	case ModelKind::osgnet: return "osgnet";
	case ModelKind::dual_osgnet: return "dual_osgnet";
	case ModelKind::pit_resnet: return "pit_resnet";
	}
	return "unknown";
}

bool is_varied_lag(ModelKind kind)
{
	return kind == ModelKind::osgnet || kind == ModelKind::dual_osgnet;
}

OsgNet ModelBundle::osg_net() const
{
	OsgNet net;
	net.core = core;
	net.encoding = encoding;
	net.prefix = "osg.";
	return net;
}

DualOsgNet ModelBundle::dual_net() const
{
	DualOsgNet net;
	net.branch_a = {core, encoding, "a."};
	net.branch_b = {core, encoding, "b."};
	net.gate = gate;
	net.gate_prefix = "gate.";
	return net;
}

Var ModelBundle::step(ParamView& pv, Var window, Var lags) const
{
	const Eigen::Index in_width = static_cast<Eigen::Index>(memory + 1) * state_width;
	if (window.cols() != in_width)
		throw DimensionError(to_string(kind) + " step expects " + std::to_string(in_width) + " columns, got " +
		                     shape_string(window.value()));
	switch (kind) {
	case ModelKind::resnet: {
		Var newest = memory == 0 ? window : slice_cols(window, 0, state_width);
		return newest + fnn_forward(pv, core, window, "net.");
	}
	case ModelKind::gresnet:
		if (!prior)
			throw ContractError("gResNet bundle has no affine prior");
		return gresnet_forward(*prior, pv, core, window, "net.");
	case ModelKind::osgnet:
		return osgnet_forward(pv, osg_net(), window, lags);
	case ModelKind::dual_osgnet:
		return dual_osgnet_forward(pv, dual_net(), window, lags);
	case ModelKind::pit_resnet: {
		const PitSpec& spec = *pit;
		const Eigen::Index batch = window.rows();
		Var stacked = reshape(window, batch * spec.mesh.rows(), spec.channels);
		Var out = pit_forward(pv, spec, spec.mesh, stacked);
		return window + reshape(out, batch, window.cols());
	}
	}
	throw ContractError("unhandled model kind");
}

Matrix ModelBundle::step(const Matrix& window, const Matrix& lags) const
{
	Tape tape;
	ParamView pv(tape, params);
	return step(pv, tape.constant(window), tape.constant(lags)).value();
}

Matrix ModelBundle::step_on_mesh(const Matrix& mesh, const Matrix& u) const
{
	if (kind != ModelKind::pit_resnet)
		throw ContractError("only PiT models can be evaluated on another mesh");
	const PitSpec& spec = *pit;
	const Matrix stacked = u.reshaped<Eigen::RowMajor>(u.size() / spec.channels, spec.channels);
	const Matrix out = pit_forward(params, spec, mesh, stacked);
	return u + out.reshaped<Eigen::RowMajor>(u.rows(), u.cols());
}

ModelBundle make_model(const ModelSpec& spec, std::uint64_t seed)
{
	if (spec.state_width < 1 || spec.memory < 0)
		throw ConfigError("model needs a positive state width and M >= 0");
	if (spec.memory > 0 && (is_varied_lag(spec.kind) || spec.kind == ModelKind::pit_resnet))
		throw ConfigError(to_string(spec.kind) + " models do not take memory terms");
	ModelBundle b;
	b.kind = spec.kind;
	b.state_width = spec.state_width;
	b.memory = spec.memory;
	b.seed = seed;
	b.norm = NormStats::identity(spec.state_width);
	std::mt19937_64 rng(seed);
	const int m = spec.state_width;
	switch (spec.kind) {
	case ModelKind::resnet:
	case ModelKind::gresnet:
		b.core = FnnSpec::uniform((spec.memory + 1) * m, spec.width, spec.depth, m, spec.activation);
		fnn_init_into(b.params, b.core, "net.", rng);
		break;
	case ModelKind::osgnet:
		b.core = FnnSpec::uniform(m + 1, spec.width, spec.depth, m, spec.activation);
		fnn_init_into(b.params, b.core, "osg.", rng);
		break;
	case ModelKind::dual_osgnet:
		b.core = FnnSpec::uniform(m + 1, spec.width, spec.depth, m, spec.activation);
		b.gate = FnnSpec::uniform(1, spec.width, spec.depth, 2, spec.activation);
		dual_osgnet_init(b.params, b.dual_net(), rng);
		break;
	case ModelKind::pit_resnet: {
		if (spec.mesh.rows() * spec.channels != m)
			throw ConfigError("PiT state width " + std::to_string(m) + " is not " + std::to_string(spec.mesh.rows()) +
			                  " nodes x " + std::to_string(spec.channels) + " channels");
		PitSpec p;
		p.mesh = spec.mesh;
		const int n_ltt = spec.latent_nodes > 0 ? spec.latent_nodes
		                                        : static_cast<int>((spec.mesh.rows() + 3) / 4);
		p.latent = latent_mesh_coarsen(spec.mesh, n_ltt);
		p.depth = spec.depth;
		p.width = spec.width;
		p.channels = spec.channels;
		p.activation = spec.activation;
		pit_init(b.params, p, rng);
		b.norm = NormStats::identity(spec.channels);
		b.pit = std::move(p);
		break;
	}
	}
	return b;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

const char* kMagic = "DUE-MODEL v1";

std::string join(const RowVector& v)
{
	std::string out;
	for (Eigen::Index i = 0; i < v.size(); ++i)
		out += (i ? " " : "") + format_double(v(i));
	return out;
}

std::string join(const std::vector<int>& v)
{
	std::string out;
	for (std::size_t i = 0; i < v.size(); ++i)
		out += (i ? " " : "") + std::to_string(v[i]);
	return out;
}

void write_block(std::ostream& out, const std::string& name, int rank, const Matrix& value)
{
	out << "@param " << name << ' ' << rank;
	if (rank == 1)
		out << ' ' << value.size();
	else
		out << ' ' << value.rows() << ' ' << value.cols();
	out << '\n';
	for (Eigen::Index r = 0; r < value.rows(); ++r) {
		for (Eigen::Index c = 0; c < value.cols(); ++c)
			out << (c ? " " : "") << format_double(value(r, c));
		out << '\n';
	}
}

struct ModelFile {
	std::map<std::string, std::string> meta;
	std::vector<std::pair<std::string, std::pair<int, Matrix>>> blocks;
};

std::string trim(const std::string& s)
{
	const auto a = s.find_first_not_of(" \t\r");
	if (a == std::string::npos)
		return {};
	const auto b = s.find_last_not_of(" \t\r");
	return s.substr(a, b - a + 1);
}

ModelFile read_model_file(const fs::path& path)
{
	std::ifstream in(path);
	if (!in)
		throw ParseError(path.string() + ": cannot open model file");
	std::string line;
	std::size_t lineno = 1;
	if (!std::getline(in, line) || trim(line) != kMagic)
		throw ParseError(path.string() + ":1: missing '" + std::string(kMagic) + "' header");
	ModelFile file;
	auto fail = [&](const std::string& msg) { throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + msg); };
	while (std::getline(in, line)) {
		++lineno;
		line = trim(line);
		if (line.empty() || line[0] == '#')
			continue;
		if (line.rfind("@param", 0) == 0) {
			std::istringstream hdr(line.substr(6));
			std::string name;
			int rank = 0;
			if (!(hdr >> name >> rank) || (rank != 1 && rank != 2))
				fail("malformed @param header");
			Eigen::Index rows = 1, cols = 0;
			if (rank == 1) {
				if (!(hdr >> cols))
					fail("missing dimension");
			} else if (!(hdr >> rows >> cols)) {
				fail("missing dimensions");
			}
			if (rows < 0 || cols < 0)
				fail("negative dimension");
			Matrix value(rows, cols);
			for (Eigen::Index k = 0; k < value.size(); ++k) {
				std::string tok;
				while (!(in >> tok)) {
					fail("parameter " + name + " ends early");
				}
				try {
					value.data()[k] = std::stod(tok);
				} catch (const std::exception&) {
					fail("bad number '" + tok + "' in parameter " + name);
				}
			}
			std::getline(in, line);
			lineno += static_cast<std::size_t>(rows);
			file.blocks.push_back({name, {rank, std::move(value)}});
			continue;
		}
		const auto eq = line.find('=');
		if (eq == std::string::npos)
			fail("expected 'key = value'");
		file.meta[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
	}
	return file;
}

const std::string& need(const ModelFile& f, const std::string& key)
{
	auto it = f.meta.find(key);
	if (it == f.meta.end())
		throw ParseError("model file lacks '" + key + "'");
	return it->second;
}

std::vector<double> numbers(const std::string& s)
{
	std::vector<double> out;
	std::istringstream in(s);
	std::string tok;
	while (in >> tok)
		out.push_back(std::stod(tok));
	return out;
}

RowVector row_of(const std::string& s)
{
	const auto v = numbers(s);
	RowVector r(static_cast<Eigen::Index>(v.size()));
	for (std::size_t i = 0; i < v.size(); ++i)
		r(static_cast<Eigen::Index>(i)) = v[i];
	return r;
}

FnnSpec fnn_of(const std::string& widths, Activation act)
{
	FnnSpec spec;
	for (double w : numbers(widths))
		spec.widths.push_back(static_cast<int>(w));
	spec.activation = act;
	spec.validate();
	return spec;
}

} // namespace

void save_model(const ModelBundle& b, const fs::path& path)
{
	const fs::path tmp = path.string() + ".tmp";
	{
		std::ofstream out(tmp);
		if (!out)
			throw ParseError(tmp.string() + ": cannot write model file");
		out << kMagic << '\n';
		out << "kind = " << to_string(b.kind) << '\n';
		out << "state_width = " << b.state_width << '\n';
		out << "memory = " << b.memory << '\n';
		out << "multistep = " << b.multistep << '\n';
		out << "seed = " << b.seed << '\n';
		if (!b.core.widths.empty()) {
			out << "widths = " << join(b.core.widths) << '\n';
			out << "activation = " << to_string(b.core.activation) << '\n';
		}
		if (!b.gate.widths.empty())
			out << "gate_widths = " << join(b.gate.widths) << '\n';
		if (b.pit) {
			out << "pit_depth = " << b.pit->depth << '\n';
			out << "pit_width = " << b.pit->width << '\n';
			out << "pit_channels = " << b.pit->channels << '\n';
			out << "activation = " << to_string(b.pit->activation) << '\n';
		}
		out << "lag = " << format_double(b.lag) << '\n';
		out << "lag_min = " << format_double(b.lag_min) << '\n';
		out << "lag_max = " << format_double(b.lag_max) << '\n';
		out << "lag_encoding = " << (b.encoding.log10 ? "log10" : "raw") << '\n';
		out << "lag_encoding_mean = " << format_double(b.encoding.mean) << '\n';
		out << "lag_encoding_std = " << format_double(b.encoding.std) << '\n';
		out << "norm_mean = " << join(b.norm.mean) << '\n';
		out << "norm_std = " << join(b.norm.std) << '\n';
		out << "norm_varied_lag = " << (b.norm.varied_lag ? 1 : 0) << '\n';
		out << "norm_lag_mean = " << format_double(b.norm.lag_mean) << '\n';
		out << "norm_lag_std = " << format_double(b.norm.lag_std) << '\n';
		out << "modes = " << b.modes << '\n';
		for (const auto& [k, v] : b.info)
			out << "info." << k << " = " << v << '\n';
		for (const auto& e : b.params)
			write_block(out, e.name, e.rank, e.value);
		if (b.prior) {
			write_block(out, "const.prior.A", 2, b.prior->A);
			write_block(out, "const.prior.b", 1, b.prior->b);
		}
		if (b.pit) {
			write_block(out, "const.pit.mesh", 2, b.pit->mesh);
			write_block(out, "const.pit.latent", 2, b.pit->latent);
		}
		if (b.modes > 0)
			write_block(out, "const.modal.mesh", 2, b.modal_mesh);
		out.flush();
		if (!out)
			throw ParseError(tmp.string() + ": write failed");
	}
	fs::rename(tmp, path);
}

ModelBundle load_model(const fs::path& path)
{
	const ModelFile f = read_model_file(path);
	ModelBundle b;
	try {
		b.kind = parse_model_kind(need(f, "kind"));
		b.state_width = std::stoi(need(f, "state_width"));
		b.memory = std::stoi(need(f, "memory"));
		b.multistep = std::stoi(need(f, "multistep"));
		b.seed = std::stoull(need(f, "seed"));
		const Activation act = parse_activation(need(f, "activation"));
		if (f.meta.count("widths"))
			b.core = fnn_of(f.meta.at("widths"), act);
		if (f.meta.count("gate_widths"))
			b.gate = fnn_of(f.meta.at("gate_widths"), act);
		b.lag = std::stod(need(f, "lag"));
		b.lag_min = std::stod(need(f, "lag_min"));
		b.lag_max = std::stod(need(f, "lag_max"));
		b.encoding.log10 = need(f, "lag_encoding") == "log10";
		b.encoding.mean = std::stod(need(f, "lag_encoding_mean"));
		b.encoding.std = std::stod(need(f, "lag_encoding_std"));
		b.norm.mean = row_of(need(f, "norm_mean"));
		b.norm.std = row_of(need(f, "norm_std"));
		b.norm.varied_lag = need(f, "norm_varied_lag") == "1";
		b.norm.lag_mean = std::stod(need(f, "norm_lag_mean"));
		b.norm.lag_std = std::stod(need(f, "norm_lag_std"));
		b.modes = std::stoi(need(f, "modes"));
		for (const auto& [k, v] : f.meta)
			if (k.rfind("info.", 0) == 0)
				b.info[k.substr(5)] = v;

		std::map<std::string, Matrix> consts;
		for (const auto& [name, block] : f.blocks) {
			if (name.rfind("const.", 0) == 0)
				consts[name.substr(6)] = block.second;
			else
				b.params.add(name, block.second, block.first);
		}
		if (consts.count("prior.A")) {
			b.prior = AffinePrior{consts.at("prior.A"), consts.at("prior.b")};
		}
		if (b.kind == ModelKind::gresnet && !b.prior)
			throw ParseError("gResNet model lacks its affine prior");
		if (b.kind == ModelKind::pit_resnet) {
			if (!consts.count("pit.mesh") || !consts.count("pit.latent"))
				throw ParseError("PiT model lacks its meshes");
			PitSpec p;
			p.mesh = consts.at("pit.mesh");
			p.latent = consts.at("pit.latent");
			p.depth = std::stoi(need(f, "pit_depth"));
			p.width = std::stoi(need(f, "pit_width"));
			p.channels = std::stoi(need(f, "pit_channels"));
			p.activation = act;
			b.pit = std::move(p);
		}
		if (b.modes > 0) {
			if (!consts.count("modal.mesh"))
				throw ParseError("modal model lacks its mesh");
			b.modal_mesh = consts.at("modal.mesh");
		}
	} catch (const Error&) {
		throw;
	} catch (const std::exception& e) {
		throw ParseError(path.string() + ": malformed model metadata (" + e.what() + ")");
	}
	return b;
}

} // namespace fml
