#include "ucdr/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "config_json.hpp"
#include "ucdr/errors.hpp"
#include "ucdr/tensor_io.hpp"
#include "ucdr/util.hpp"

namespace ucdr {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'U', 'C', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

const char* kTpgSectionNames[] = {"tpg_mlp_w1", "tpg_mlp_b1", "tpg_mlp_w2", "tpg_mlp_b2",
                                  "tpg_query_w", "tpg_query_b", "tpg_key_w", "tpg_key_b"};

// Fixed section order; the header echoes it so files are self-describing.
std::vector<std::pair<std::string, const Tensor<float>*>> sections_of(const Checkpoint& c) {
  std::vector<std::pair<std::string, const Tensor<float>*>> s{
      {"class_prompts", &c.class_prompts},
      {"domain_prompts", &c.domain_prompts},
      {"class_prompts_momentum", &c.class_prompts_momentum},
      {"domain_prompts_momentum", &c.domain_prompts_momentum},
      {"projection_w", &c.projection_w},
      {"projection_b", &c.projection_b},
      {"domain_context", &c.domain_context},
  };
  if (c.state.phase >= 2) {
    if (c.tpg_params.size() != std::size(kTpgSectionNames)) {
      throw ContractError("checkpoint: phase-2 state needs " + std::to_string(std::size(kTpgSectionNames)) +
                          " generator tensors, got " + std::to_string(c.tpg_params.size()));
    }
    for (std::size_t i = 0; i < c.tpg_params.size(); ++i) {
      s.emplace_back(kTpgSectionNames[i], &c.tpg_params[i]);
    }
  }
  if (c.has_queues()) s.emplace_back("queue_features", &c.queue_features);
  for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
    s.emplace_back("adam_m_" + std::to_string(i), &c.adam_m[i]);
  }
  for (std::size_t i = 0; i < c.adam_v.size(); ++i) {
    s.emplace_back("adam_v_" + std::to_string(i), &c.adam_v[i]);
  }
  return s;
}

json header_of(const Checkpoint& c, const std::vector<std::pair<std::string, const Tensor<float>*>>& sections) {
  json h;
  h["schema_version"] = 1;
  h["phase"] = c.state.phase;
  h["run_seed"] = c.run_seed;
  h["model"] = to_json(c.model);
  h["seen_classes"] = c.seen_classes;
  h["seen_domains"] = c.seen_domains;
  h["state"] = json{{"epochs_completed", c.state.epochs_completed},
                    {"best_score", c.state.best_score},
                    {"best_epoch", c.state.best_epoch},
                    {"epochs_since_improve", c.state.epochs_since_improve},
                    {"adam_step", c.state.adam_step},
                    {"finished", c.state.finished}};
  if (c.has_queues()) {
    json classes = json::array();
    for (const auto& qc : c.queue_classes) {
      classes.push_back(json{{"class_id", qc.class_id}, {"seqs", qc.seqs}});
    }
    h["queue"] = json{{"capacity", c.queue_capacity}, {"next_seq", c.queue_next_seq}, {"classes", classes}};
  } else {
    h["queue"] = nullptr;
  }
  json names = json::array();
  for (const auto& [name, tensor] : sections) names.push_back(name);
  h["sections"] = std::move(names);
  return h;
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError(std::string("checkpoint: truncated reading ") + what);
  return v;
}

std::uint64_t read_u64(std::istream& in, const char* what) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError(std::string("checkpoint: truncated reading ") + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto sections = sections_of(ckpt);
  const std::string header = header_of(ckpt, sections).dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof kMagic);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(ckpt.state.phase));
  write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, tensor] : sections) write_tensor(out, *tensor);
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);

  char magic[4];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("load_checkpoint: " + path + " is not a checkpoint file");
  }
  const std::uint32_t version = read_u32(in, "version");
  if (version != kVersion) {
    throw FormatError("load_checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t phase = read_u32(in, "phase");
  if (phase != 1 && phase != 2) {
    throw FormatError("load_checkpoint: phase must be 1 or 2, got " + std::to_string(phase));
  }

  const std::uint64_t header_len = read_u64(in, "header length");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError("load_checkpoint: truncated header");

  json h;
  try {
    h = json::parse(header);
  } catch (const json::parse_error& e) {
    throw FormatError("load_checkpoint: header is not valid JSON: " + std::string(e.what()));
  }

  Checkpoint c;
  std::vector<std::string> names;
  try {
    if (h.at("schema_version").get<int>() != 1) throw FormatError("load_checkpoint: unsupported header schema");
    c.state.phase = h.at("phase").get<int>();
    if (c.state.phase != static_cast<int>(phase)) {
      throw FormatError("load_checkpoint: header phase disagrees with the binary phase field");
    }
    c.run_seed = h.at("run_seed").get<std::uint64_t>();
    c.model = model_config_from_json(h.at("model"));
    c.seen_classes = h.at("seen_classes").get<std::vector<int>>();
    c.seen_domains = h.at("seen_domains").get<std::vector<int>>();
    const json& st = h.at("state");
    c.state.epochs_completed = st.at("epochs_completed").get<std::int64_t>();
    c.state.best_score = st.at("best_score").get<double>();
    c.state.best_epoch = st.at("best_epoch").get<std::int64_t>();
    c.state.epochs_since_improve = st.at("epochs_since_improve").get<int>();
    c.state.adam_step = st.at("adam_step").get<std::int64_t>();
    c.state.finished = st.at("finished").get<bool>();
    const json& q = h.at("queue");
    if (!q.is_null()) {
      c.queue_capacity = q.at("capacity").get<std::size_t>();
      c.queue_next_seq = q.at("next_seq").get<std::uint64_t>();
      for (const json& qc : q.at("classes")) {
        QueueClassSnapshot snap;
        snap.class_id = qc.at("class_id").get<int>();
        snap.seqs = qc.at("seqs").get<std::vector<std::uint64_t>>();
        c.queue_classes.push_back(std::move(snap));
      }
    }
    names = h.at("sections").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError("load_checkpoint: header missing fields: " + std::string(e.what()));
  }

  if (c.state.phase >= 2) c.tpg_params.resize(std::size(kTpgSectionNames));
  for (const std::string& name : names) {
    Tensor<float> t = read_tensor(in);
    if (name == "class_prompts") c.class_prompts = t;
    else if (name == "domain_prompts") c.domain_prompts = t;
    else if (name == "class_prompts_momentum") c.class_prompts_momentum = t;
    else if (name == "domain_prompts_momentum") c.domain_prompts_momentum = t;
    else if (name == "projection_w") c.projection_w = t;
    else if (name == "projection_b") c.projection_b = t;
    else if (name == "domain_context") c.domain_context = t;
    else if (name == "queue_features") c.queue_features = t;
    else if (name.rfind("tpg_", 0) == 0) {
      auto it = std::find(std::begin(kTpgSectionNames), std::end(kTpgSectionNames), name);
      if (it == std::end(kTpgSectionNames) || c.state.phase < 2) {
        throw FormatError("load_checkpoint: unexpected section '" + name + "'");
      }
      c.tpg_params[static_cast<std::size_t>(it - std::begin(kTpgSectionNames))] = t;
    } else if (name.rfind("adam_m_", 0) == 0) {
      c.adam_m.push_back(t);
    } else if (name.rfind("adam_v_", 0) == 0) {
      c.adam_v.push_back(t);
    } else {
      throw FormatError("load_checkpoint: unknown section '" + name + "'");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("load_checkpoint: trailing bytes after the last section");
  }

  // Re-deriving the section list must reproduce what the file declared;
  // catches truncated or duplicated sections.
  const auto expect = sections_of(c);
  if (expect.size() != names.size()) {
    throw FormatError("load_checkpoint: expected " + std::to_string(expect.size()) + " sections, found " +
                      std::to_string(names.size()));
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (expect[i].first != names[i]) {
      throw FormatError("load_checkpoint: section order mismatch at '" + names[i] + "'");
    }
  }
  return c;
}

namespace {

void copy_into(Tensor<float>& dst, const Tensor<float>& src, const char* what) {
  if (dst.shape() != src.shape()) {
    throw FormatError(std::string("checkpoint: ") + what + " has shape " + shape_to_string(src.shape()) +
                      ", model expects " + shape_to_string(dst.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.data().begin());
}

}  // namespace

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  auto model = Model<float>::make(ckpt.model, ckpt.seen_classes, ckpt.seen_domains);
  copy_into(model.bank.class_prompts(), ckpt.class_prompts, "class_prompts");
  copy_into(model.bank.domain_prompts(), ckpt.domain_prompts, "domain_prompts");
  copy_into(model.bank.class_prompts_momentum(), ckpt.class_prompts_momentum, "class_prompts_momentum");
  copy_into(model.bank.domain_prompts_momentum(), ckpt.domain_prompts_momentum, "domain_prompts_momentum");
  copy_into(model.bank.projection_w(), ckpt.projection_w, "projection_w");
  copy_into(model.bank.projection_b(), ckpt.projection_b, "projection_b");
  copy_into(model.semantic_template.domain_context(), ckpt.domain_context, "domain_context");
  if (ckpt.state.phase >= 2) {
    auto params = model.tpg.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      copy_into(params[i], ckpt.tpg_params[i], kTpgSectionNames[i]);
    }
  }
  return model;
}

Checkpoint checkpoint_from_model(const Model<float>& model, std::uint64_t run_seed, const TrainState& state) {
  Checkpoint c;
  c.model = model.cfg;
  c.seen_classes = model.seen_classes;
  c.seen_domains = model.seen_domains;
  c.run_seed = run_seed;
  c.state = state;
  c.class_prompts = model.bank.class_prompts().clone();
  c.domain_prompts = model.bank.domain_prompts().clone();
  c.class_prompts_momentum = model.bank.class_prompts_momentum().clone();
  c.domain_prompts_momentum = model.bank.domain_prompts_momentum().clone();
  c.projection_w = model.bank.projection_w().clone();
  c.projection_b = model.bank.projection_b().clone();
  c.domain_context = model.semantic_template.domain_context().clone();
  if (state.phase >= 2) {
    for (const auto& p : model.tpg.parameters()) c.tpg_params.push_back(p.clone());
  }
  return c;
}

void store_queues(Checkpoint& ckpt, const ClassQueueSet<float>& queues) {
  ckpt.queue_capacity = queues.capacity();
  ckpt.queue_next_seq = queues.next_sequence();
  ckpt.queue_classes.clear();

  const std::size_t e = queues.feature_dim();
  std::vector<float> flat;
  flat.reserve(queues.total_size() * e);
  for (int class_id : queues.class_ids()) {
    QueueClassSnapshot snap;
    snap.class_id = class_id;
    for (const auto& [seq, feature] : queues.snapshot(class_id)) {
      snap.seqs.push_back(seq);
      flat.insert(flat.end(), feature.begin(), feature.end());
    }
    ckpt.queue_classes.push_back(std::move(snap));
  }
  ckpt.queue_features = Tensor<float>::from_data({flat.size() / e, e}, flat);
}

ClassQueueSet<float> restore_queues(const Checkpoint& ckpt) {
  if (!ckpt.has_queues()) throw StateError("restore_queues: checkpoint carries no queue state");
  std::vector<int> class_ids;
  class_ids.reserve(ckpt.queue_classes.size());
  std::size_t total = 0;
  for (const auto& qc : ckpt.queue_classes) {
    class_ids.push_back(qc.class_id);
    total += qc.seqs.size();
  }
  if (ckpt.queue_features.rank() != 2 || ckpt.queue_features.shape()[0] != total) {
    throw FormatError("restore_queues: feature rows do not match the recorded sequence stamps");
  }
  const std::size_t e = ckpt.queue_features.shape()[1];
  ClassQueueSet<float> queues(class_ids, ckpt.queue_capacity, e);
  const auto fv = ckpt.queue_features.data();
  std::size_t row = 0;
  for (const auto& qc : ckpt.queue_classes) {
    std::vector<std::pair<std::uint64_t, std::vector<float>>> entries;
    for (std::uint64_t seq : qc.seqs) {
      entries.emplace_back(seq, std::vector<float>(fv.begin() + static_cast<std::ptrdiff_t>(row * e),
                                                   fv.begin() + static_cast<std::ptrdiff_t>((row + 1) * e)));
      ++row;
    }
    queues.restore(qc.class_id, entries, 0);
  }
  queues.set_next_sequence(ckpt.queue_next_seq);
  return queues;
}

std::uint64_t checkpoint_file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint_file_hash: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    if (!in) break;
  }
  return h;
}

}  // namespace ucdr
