#include "mgh/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mgh/log.hpp"

namespace mgh {

// ---------------------------------------------------------------- batches

TrainingSet TrainingSet::from_corpus(const Corpus& corpus)
{
    TrainingSet set;
    std::map<std::uint32_t, std::size_t> label_of;
    for (std::size_t i : corpus.indices(Split::Train)) label_of.emplace(corpus.manifest.tracklets[i].identity, 0);
    std::size_t next = 0;
    for (auto& [identity, label] : label_of) label = next++;
    set.by_label.resize(label_of.size());
    for (std::size_t i : corpus.indices(Split::Train)) {
        const std::size_t label = label_of.at(corpus.manifest.tracklets[i].identity);
        set.by_label[label].push_back(set.tracklets.size());
        set.tracklets.push_back(&corpus.sequences[i]);
        set.labels.push_back(label);
    }
    return set;
}

SequenceFeatures window(const SequenceFeatures& seq, std::size_t start, std::size_t frames)
{
    if (seq.frames.empty()) throw DataError("cannot window an empty tracklet");
    SequenceFeatures out;
    out.tracklet_id = seq.tracklet_id;
    out.camera_id = seq.camera_id;
    out.frames.reserve(frames);
    for (std::size_t j = 0; j < frames; ++j) out.frames.push_back(seq.frames[(start + j) % seq.frames.size()]);
    return out;
}

Batch sample_batch(const TrainingSet& set, const BatchSpec& spec, std::mt19937_64& rng)
{
    if (set.classes() < spec.identities) {
        throw CorpusError("batch needs " + std::to_string(spec.identities) + " identities, corpus has " +
                          std::to_string(set.classes()));
    }
    if (spec.frames < 1) throw ConfigError("window length T must be at least 1");

    std::vector<std::size_t> labels(set.classes());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i;
    for (std::size_t i = 0; i < spec.identities; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, labels.size() - 1);
        std::swap(labels[i], labels[pick(rng)]);
    }

    Batch batch;
    for (std::size_t i = 0; i < spec.identities; ++i) {
        const std::size_t label = labels[i];
        std::vector<std::size_t> pool = set.by_label[label];
        if (pool.empty()) throw CorpusError("identity label " + std::to_string(label) + " has no tracklets");
        std::vector<std::size_t> chosen;
        if (pool.size() >= spec.per_identity) {
            for (std::size_t k = 0; k < spec.per_identity; ++k) {
                std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
                std::swap(pool[k], pool[pick(rng)]);
                chosen.push_back(pool[k]);
            }
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            for (std::size_t k = 0; k < spec.per_identity; ++k) chosen.push_back(pool[pick(rng)]);
        }
        for (std::size_t idx : chosen) {
            const SequenceFeatures& seq = *set.tracklets[idx];
            const std::size_t len = seq.length();
            const std::size_t last_start = len >= spec.frames ? len - spec.frames : len - 1;
            const std::size_t start = std::uniform_int_distribution<std::size_t>(0, last_start)(rng);
            batch.sequences.push_back(window(seq, start, spec.frames));
            batch.labels.push_back(label);
        }
    }
    return batch;
}

// ---------------------------------------------------------------- optimizer

void OptimizerState::step(std::span<Parameter* const> params, double lr, double weight_decay)
{
    apply(params, lr, weight_decay, 1.0);
}

void OptimizerState::ascend(std::span<Parameter* const> params, double lr) { apply(params, lr, 0.0, -1.0); }

void OptimizerState::restore(std::uint64_t steps, std::map<std::string, std::pair<Array, Array>> moments)
{
    steps_ = steps;
    moments_ = std::move(moments);
}

void OptimizerState::apply(std::span<Parameter* const> params, double lr, double weight_decay, double direction)
{
    for (Parameter* p : params) {
        if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(settings_.beta1, t);
    const double correction2 = 1.0 - std::pow(settings_.beta2, t);
    for (Parameter* p : params) {
        auto [it, inserted] = moments_.try_emplace(p->name, Array(p->value.shape(), 0.0), Array(p->value.shape(), 0.0));
        Array& m = it->second.first;
        Array& v = it->second.second;
        if (m.shape() != p->value.shape()) throw ShapeError("optimizer state for '" + p->name + "' has the wrong shape");
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = direction * p->grad[i];
            m[i] = settings_.beta1 * m[i] + (1.0 - settings_.beta1) * g;
            v[i] = settings_.beta2 * v[i] + (1.0 - settings_.beta2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            const double theta = p->value[i];
            p->value[i] = theta - lr * m_hat / (std::sqrt(v_hat) + settings_.eps) - lr * weight_decay * theta;
        }
        p->zero_grad();
    }
}

double lr_at(std::size_t epoch, double base)
{
    const std::size_t drops = epoch / 100;
    double lr = base;
    for (std::size_t i = 0; i < drops; ++i) lr /= 10.0;
    return lr;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'M', 'G', 'H', 'C'};

enum class RecordKind : std::uint8_t { Tensor = 0, Bytes = 1, U64 = 2 };

class Writer {
public:
    template <typename T>
    void put(T v)
    {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes.insert(bytes.end(), p, p + sizeof v);
    }
    void put_bytes(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const std::uint8_t*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    void name(RecordKind kind, const std::string& n)
    {
        put(static_cast<std::uint8_t>(kind));
        put(static_cast<std::uint32_t>(n.size()));
        put_bytes(n.data(), n.size());
    }
    void u64(const std::string& n, std::uint64_t v)
    {
        name(RecordKind::U64, n);
        put(v);
    }
    void blob(const std::string& n, const std::string& v)
    {
        name(RecordKind::Bytes, n);
        put(static_cast<std::uint64_t>(v.size()));
        put_bytes(v.data(), v.size());
    }
    void tensor(const std::string& n, const Array& a)
    {
        name(RecordKind::Tensor, n);
        put(static_cast<std::uint32_t>(a.rank()));
        for (std::size_t d : a.shape()) put(static_cast<std::uint64_t>(d));
        put_bytes(a.values().data(), a.size() * sizeof(double));
    }

    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    template <typename T>
    T get()
    {
        T v{};
        need(sizeof v);
        std::memcpy(&v, data_.data() + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    std::string get_string(std::size_t n)
    {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void get_doubles(std::span<double> out)
    {
        need(out.size() * sizeof(double));
        std::memcpy(out.data(), data_.data() + pos_, out.size() * sizeof(double));
        pos_ += out.size() * sizeof(double);
    }
    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }
    [[noreturn]] void fail(const std::string& why) const
    {
        throw FormatError("checkpoint: " + why + " at offset " + std::to_string(pos_));
    }

private:
    void need(std::size_t n) const
    {
        if (pos_ + n > data_.size()) fail("unexpected end of data");
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const
{
    Writer w;
    w.put_bytes(kCheckpointMagic, 4);
    w.put(kVersion);
    const std::size_t records = 9 + parameters.size() + optimizer.size();
    w.put(static_cast<std::uint32_t>(records));
    w.blob("config", config_text);
    w.u64("config_hash", config_hash);
    w.u64("epoch", epoch);
    w.u64("iteration", iteration);
    w.u64("dim", dim);
    w.u64("classes", classes);
    w.blob("rng", rng_state);
    w.u64("encoder_steps", encoder_steps);
    w.u64("critic_steps", critic_steps);
    for (const NamedArray& p : parameters) w.tensor("param:" + p.name, p.value);
    for (const NamedArray& o : optimizer) w.tensor("opt:" + o.name, o.value);
    return std::move(w.bytes);
}

Checkpoint Checkpoint::deserialize(std::span<const std::uint8_t> bytes)
{
    Reader r(bytes);
    const auto magic = r.get_string(4);
    if (magic != std::string(kCheckpointMagic, 4)) {
        throw FormatError("checkpoint: bad magic at offset 0");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at offset 4");
    const auto records = r.get<std::uint32_t>();

    Checkpoint ckpt;
    std::map<std::string, bool> seen;
    for (std::uint32_t i = 0; i < records; ++i) {
        const std::size_t record_start = r.offset();
        const auto kind = r.get<std::uint8_t>();
        const auto name_len = r.get<std::uint32_t>();
        if (name_len > bytes.size()) r.fail("implausible name length");
        const std::string name = r.get_string(name_len);
        switch (static_cast<RecordKind>(kind)) {
        case RecordKind::U64: {
            const auto v = r.get<std::uint64_t>();
            if (name == "config_hash") ckpt.config_hash = v;
            else if (name == "epoch") ckpt.epoch = v;
            else if (name == "iteration") ckpt.iteration = v;
            else if (name == "dim") ckpt.dim = v;
            else if (name == "classes") ckpt.classes = v;
            else if (name == "encoder_steps") ckpt.encoder_steps = v;
            else if (name == "critic_steps") ckpt.critic_steps = v;
            else throw FormatError("checkpoint: unknown record '" + name + "' at offset " + std::to_string(record_start));
            break;
        }
        case RecordKind::Bytes: {
            const auto len = r.get<std::uint64_t>();
            if (len > bytes.size()) r.fail("implausible blob length");
            std::string v = r.get_string(static_cast<std::size_t>(len));
            if (name == "config") ckpt.config_text = std::move(v);
            else if (name == "rng") ckpt.rng_state = std::move(v);
            else throw FormatError("checkpoint: unknown record '" + name + "' at offset " + std::to_string(record_start));
            break;
        }
        case RecordKind::Tensor: {
            const auto rank = r.get<std::uint32_t>();
            if (rank > 8) r.fail("implausible tensor rank");
            Shape shape;
            std::size_t count = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
                count *= shape.back();
                if (count > bytes.size()) r.fail("implausible tensor size");
            }
            Array value(shape, 0.0);
            r.get_doubles(value.values());
            if (name.rfind("param:", 0) == 0) ckpt.parameters.push_back({name.substr(6), std::move(value)});
            else if (name.rfind("opt:", 0) == 0) ckpt.optimizer.push_back({name.substr(4), std::move(value)});
            else throw FormatError("checkpoint: unknown record '" + name + "' at offset " + std::to_string(record_start));
            break;
        }
        default:
            throw FormatError("checkpoint: unknown record kind " + std::to_string(kind) + " at offset " +
                              std::to_string(record_start));
        }
    }
    if (!r.done()) r.fail("trailing bytes");
    return ckpt;
}

TrainConfig Checkpoint::config() const { return TrainConfig::from_config(KeyValueConfig::parse(config_text)); }

namespace {

void load_parameters(MGHModel& model, const std::vector<NamedArray>& stored)
{
    std::map<std::string, const Array*> by_name;
    for (const NamedArray& p : stored) by_name.emplace(p.name, &p.value);
    for (Parameter* p : model.parameters()) {
        const auto it = by_name.find(p->name);
        if (it == by_name.end()) throw FormatError("checkpoint is missing parameter '" + p->name + "'");
        if (it->second->shape() != p->value.shape()) {
            throw FormatError("checkpoint parameter '" + p->name + "' has shape " + shape_string(it->second->shape()) +
                              ", model expects " + shape_string(p->value.shape()));
        }
        p->value = *it->second;
        p->zero_grad();
    }
}

} // namespace

std::unique_ptr<MGHModel> Checkpoint::restore_model() const
{
    const TrainConfig cfg = config();
    std::mt19937_64 scratch(0);
    auto model = std::make_unique<MGHModel>(cfg.model, static_cast<std::size_t>(dim), static_cast<std::size_t>(classes), scratch);
    load_parameters(*model, parameters);
    return model;
}

std::uint64_t trajectory_hash(const TrainConfig& config)
{
    TrainConfig c = config;
    c.epochs = 0;
    c.checkpoint_every = 0;
    return fnv1a64(c.to_text());
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path)
{
    const auto bytes = ckpt.serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("checkpoint write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Checkpoint::deserialize(bytes);
}

// ---------------------------------------------------------------- training loop

namespace {

void store_moments(const OptimizerState& opt, const std::string& prefix, std::vector<NamedArray>& out)
{
    for (const auto& [name, mv] : opt.moments()) {
        out.push_back({prefix + "m:" + name, mv.first});
        out.push_back({prefix + "v:" + name, mv.second});
    }
}

std::map<std::string, std::pair<Array, Array>> read_moments(const std::vector<NamedArray>& stored, const std::string& prefix)
{
    std::map<std::string, std::pair<Array, Array>> out;
    for (const NamedArray& a : stored) {
        if (a.name.rfind(prefix, 0) != 0) continue;
        const std::string rest = a.name.substr(prefix.size());
        if (rest.rfind("m:", 0) == 0) out[rest.substr(2)].first = a.value;
        else if (rest.rfind("v:", 0) == 0) out[rest.substr(2)].second = a.value;
    }
    return out;
}

struct TrainerState {
    std::mt19937_64 rng;
    std::unique_ptr<MGHModel> model;
    OptimizerState encoder_opt;
    OptimizerState critic_opt;
    std::uint64_t epoch = 0;
    std::uint64_t iteration = 0;
};

Checkpoint snapshot(TrainerState& s, const TrainConfig& config)
{
    Checkpoint ckpt;
    ckpt.config_text = config.to_text();
    ckpt.config_hash = trajectory_hash(config);
    ckpt.epoch = s.epoch;
    ckpt.iteration = s.iteration;
    ckpt.dim = s.model->dim();
    ckpt.classes = s.model->classes();
    std::ostringstream rng_text;
    rng_text << s.rng;
    ckpt.rng_state = rng_text.str();
    for (Parameter* p : s.model->parameters()) ckpt.parameters.push_back({p->name, p->value});
    ckpt.encoder_steps = s.encoder_opt.steps();
    ckpt.critic_steps = s.critic_opt.steps();
    store_moments(s.encoder_opt, "enc.", ckpt.optimizer);
    store_moments(s.critic_opt, "critic.", ckpt.optimizer);
    return ckpt;
}

StepLog train_step(TrainerState& s, const TrainConfig& config, const TrainingSet& set)
{
    const BatchSpec spec{config.identities_per_batch, config.tracklets_per_identity, config.frames};
    const Batch batch = sample_batch(set, spec, s.rng);
    // Drawn every step so that toggling the MI term leaves the batch stream unchanged.
    const std::vector<std::size_t> derangement = random_derangement(batch.sequences.size(), s.rng);

    MGHModel& model = *s.model;
    Tape tape;
    const ForwardPass pass = model.forward(tape, batch.sequences);

    const Var zero = tape.constant(Array::scalar(0.0));
    LossTerms terms{zero, zero, zero};
    if (config.losses.xent) {
        for (const auto& [p, h] : pass.features) terms.xent = ops::add(terms.xent, xent_loss(h, batch.labels, model.head(p)));
    }
    if (config.losses.triplet) {
        const TripletConfig tri{config.margin};
        for (const auto& [p, h] : pass.features) terms.triplet = ops::add(terms.triplet, batch_hard_triplet(h, batch.labels, tri));
    }
    if (config.losses.mutual_info) terms.mutual_info = mi_loss(tape, pass.features, model.critics(), derangement);
    const Var total = total_loss(tape, terms, config.losses);

    tape.backward(total);
    const auto critic_params = model.critic_parameters();
    if (config.losses.mutual_info && !critic_params.empty()) s.critic_opt.ascend(critic_params, config.critic_lr);
    s.encoder_opt.step(model.encoder_parameters(), lr_at(s.epoch, config.lr), config.weight_decay);

    StepLog log;
    log.step = s.iteration;
    log.xent = terms.xent.value().item();
    log.triplet = terms.triplet.value().item();
    log.mutual_info = terms.mutual_info.value().item();
    log.total = total.value().item();
    return log;
}

std::string format_csv_row(const StepLog& log)
{
    std::ostringstream out;
    out << std::setprecision(17) << log.step << ',' << log.xent << ',' << log.triplet << ',' << log.mutual_info << ','
        << log.total;
    return out.str();
}

} // namespace

TrainResult train(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options)
{
    config.validate();
    const TrainingSet set = TrainingSet::from_corpus(corpus);
    if (set.classes() < 2) throw CorpusError("training split needs at least two identities");
    if (set.classes() < config.identities_per_batch) {
        throw CorpusError("training split has " + std::to_string(set.classes()) + " identities, P = " +
                          std::to_string(config.identities_per_batch));
    }
    for (std::size_t p : config.model.partitions) {
        if (corpus.manifest.height % p != 0) {
            throw PartitionError("feature height " + std::to_string(corpus.manifest.height) +
                                 " is not divisible by partition count " + std::to_string(p));
        }
    }

    TrainerState s;
    s.rng.seed(config.seed);
    s.model = std::make_unique<MGHModel>(config.model, corpus.manifest.channels, set.classes(), s.rng);

    if (options.resume) {
        const Checkpoint& ck = *options.resume;
        if (ck.config_hash != trajectory_hash(config)) {
            throw ConfigError("checkpoint was produced under a different training configuration");
        }
        if (ck.dim != s.model->dim() || ck.classes != s.model->classes()) {
            throw ConfigError("checkpoint dimensions do not match the corpus");
        }
        load_parameters(*s.model, ck.parameters);
        s.encoder_opt.restore(ck.encoder_steps, read_moments(ck.optimizer, "enc."));
        s.critic_opt.restore(ck.critic_steps, read_moments(ck.optimizer, "critic."));
        std::istringstream rng_text(ck.rng_state);
        rng_text >> s.rng;
        if (!rng_text) throw FormatError("checkpoint RNG state is unreadable");
        s.epoch = ck.epoch;
        s.iteration = ck.iteration;
    }

    TrainResult result;
    std::ofstream csv;
    if (!options.out_dir.empty()) {
        std::filesystem::create_directories(options.out_dir);
        const auto csv_path = options.out_dir / "losses.csv";
        const bool append = options.resume && std::filesystem::exists(csv_path);
        csv.open(csv_path, append ? std::ios::app : std::ios::trunc);
        if (!csv) throw IoError("cannot write " + csv_path.string());
        if (!append) csv << "step,L_xent,L_tri,L_MI,L_all\n";
    }

    std::string last_checkpoint = "none";
    while (s.epoch < config.epochs) {
        for (std::size_t it = 0; it < config.iters_per_epoch; ++it) {
            StepLog log;
            try {
                log = train_step(s, config, set);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at step " + std::to_string(s.iteration) + ": " + e.what() +
                                   " (last checkpoint: " + last_checkpoint + ")");
            }
            if (!std::isfinite(log.total)) {
                throw NumericError("non-finite loss at step " + std::to_string(s.iteration) +
                                   " (last checkpoint: " + last_checkpoint + ")");
            }
            ++s.iteration;
            if (csv.is_open()) csv << format_csv_row(log) << '\n';
            if (options.on_step) options.on_step(log);
            result.log.push_back(log);
        }
        ++s.epoch;
        log::debug("epoch " + std::to_string(s.epoch) + " done, L_all " + std::to_string(result.log.back().total));
        if (config.checkpoint_every && !options.out_dir.empty() && s.epoch % config.checkpoint_every == 0) {
            std::ostringstream name;
            name << "checkpoint_epoch_" << std::setw(4) << std::setfill('0') << s.epoch << ".ckpt";
            const auto path = options.out_dir / name.str();
            save_checkpoint(snapshot(s, config), path);
            last_checkpoint = path.string();
            result.saved.push_back(path);
        }
    }
    result.checkpoint = snapshot(s, config);
    return result;
}

Array standardize_columns(const Array& x, const Array& reference)
{
    if (x.rank() != 2 || reference.rank() != 2 || x.cols() != reference.cols() || reference.rows() == 0) {
        throw ShapeError("standardize_columns: " + shape_string(x.shape()) + " against " + shape_string(reference.shape()));
    }
    Array out = x;
    const double n = static_cast<double>(reference.rows());
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < reference.rows(); ++r) mean += reference(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < reference.rows(); ++r) var += (reference(r, c) - mean) * (reference(r, c) - mean);
        const double sd = std::sqrt(var / n);
        const double scale = sd > 1e-12 ? 1.0 / sd : 1.0;
        for (std::size_t r = 0; r < x.rows(); ++r) out(r, c) = (x(r, c) - mean) * scale;
    }
    return out;
}

double heldout_mi_estimate(const Array& first, const Array& second, const Array& heldout_first,
                           const Array& heldout_second, std::size_t steps, double lr, std::uint64_t seed)
{
    if (first.rank() != 2 || second.rank() != 2 || first.rows() != second.rows()) {
        throw ShapeError("heldout_mi_estimate: training features must be aligned matrices");
    }
    if (heldout_first.rows() != heldout_second.rows()) throw ShapeError("heldout_mi_estimate: held-out rows disagree");
    const Array fit_a = standardize_columns(first, first), fit_b = standardize_columns(second, second);
    const Array held_a = standardize_columns(heldout_first, first), held_b = standardize_columns(heldout_second, second);
    std::mt19937_64 rng(seed);
    Parameter critic("critic.fresh", Array({first.cols(), second.cols()}, 0.0));
    OptimizerState opt;
    Parameter* params[] = {&critic};
    for (std::size_t i = 0; i < steps; ++i) {
        Tape tape;
        const auto perm = random_derangement(first.rows(), rng);
        const Var est = mi_estimate(tape.constant(fit_a), tape.constant(fit_b), tape.param(critic), perm);
        tape.backward(est);
        opt.ascend(params, lr);
    }
    constexpr std::size_t kShuffles = 16;
    double total = 0.0;
    for (std::size_t i = 0; i < kShuffles; ++i) {
        Tape tape;
        const auto perm = random_derangement(heldout_first.rows(), rng);
        total += mi_estimate(tape.constant(held_a), tape.constant(held_b), tape.param(critic), perm)
                     .value()
                     .item();
    }
    return total / static_cast<double>(kShuffles);
}

} // namespace mgh
