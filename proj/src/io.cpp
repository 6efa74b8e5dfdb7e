#include "ordiformer/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace ordiformer {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pgm_token(std::istream& in, const fs::path& path) {
    std::string tok;
    while (true) {
        int c = in.get();
        if (c == EOF) throw DataError("truncated PGM header in " + path.string());
        if (c == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
}

int pgm_int(std::istream& in, const fs::path& path) {
    const std::string tok = pgm_token(in, path);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError("bad PGM header field '" + tok + "' in " + path.string());
    }
}

}  // namespace

Image read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    if (pgm_token(in, path) != "P5") throw DataError(path.string() + " is not a binary PGM (P5)");
    const int w = pgm_int(in, path);
    const int h = pgm_int(in, path);
    const int maxval = pgm_int(in, path);
    if (w <= 0 || h <= 0) throw DataError("bad PGM size in " + path.string());
    if (maxval <= 0 || maxval > 255) throw DataError("only 8-bit PGM is supported: " + path.string());
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw DataError("truncated PGM data in " + path.string());
    Image img(h, w);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data()[i] = static_cast<float>(bytes[i]) / static_cast<float>(maxval);
    return img;
}

void write_pgm(const fs::path& path, const Image& image) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.size()));
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const float v = std::clamp(image.data()[i], 0.0f, 1.0f);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + path.string());
}

void write_dataset(const fs::path& dir, const SynthDataset& data) {
    fs::create_directories(dir);
    std::ostringstream csv;
    csv << "id,label,gap_width\n";
    for (std::size_t i = 0; i < data.data.samples.size(); ++i) {
        const auto& s = data.data.samples[i];
        write_pgm(dir / (s.id + ".pgm"), s.pixels);
        csv << s.id << ',' << s.label << ',' << (i < data.meta.size() ? data.meta[i].gap_width : 0) << '\n';
    }
    write_text(dir / "labels.csv", csv.str());
    write_text(dir / "dataset.json", json{{"num_grades", data.data.num_grades}}.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir, int num_grades) {
    const fs::path labels_path = dir / "labels.csv";
    if (!fs::exists(labels_path)) throw DataError("no labels.csv in " + dir.string());
    std::istringstream in(read_text(labels_path));
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty labels.csv in " + dir.string());
    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string cell;
        while (std::getline(hs, cell, ',')) header.push_back(cell);
    }
    auto column = [&](const std::string& name) -> int {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : static_cast<int>(it - header.begin());
    };
    const int id_col = column("id");
    const int label_col = column("label");
    const int group_col = column("group");
    if (id_col < 0 || label_col < 0) throw DataError("labels.csv needs id and label columns");

    // A declared grade count must agree with the caller's.
    if (fs::exists(dir / "dataset.json")) {
        int declared = 0;
        try {
            declared = json::parse(read_text(dir / "dataset.json")).at("num_grades").get<int>();
        } catch (const json::exception& e) {
            throw DataError("bad dataset.json in " + dir.string() + ": " + e.what());
        }
        if (declared != num_grades) {
            throw ConfigError("dataset " + dir.string() + " has " + std::to_string(declared) + " grades, expected " +
                              std::to_string(num_grades));
        }
    }

    Dataset data;
    data.num_grades = num_grades;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (static_cast<int>(cells.size()) <= std::max({id_col, label_col, group_col})) {
            throw DataError("labels.csv line " + std::to_string(line_no) + ": too few columns");
        }
        ImageSample s;
        s.id = cells[static_cast<std::size_t>(id_col)];
        try {
            std::size_t used = 0;
            s.label = std::stoi(cells[static_cast<std::size_t>(label_col)], &used);
        } catch (const std::exception&) {
            throw DataError("labels.csv line " + std::to_string(line_no) + ": bad label");
        }
        if (s.label < 0 || s.label >= num_grades) {
            throw DataError("labels.csv line " + std::to_string(line_no) + ": label " + std::to_string(s.label) +
                            " outside 0.." + std::to_string(num_grades - 1));
        }
        s.pixels = read_pgm(dir / (s.id + ".pgm"));
        if (!data.samples.empty() && (s.pixels.rows() != data.samples.front().pixels.rows() ||
                                      s.pixels.cols() != data.samples.front().pixels.cols())) {
            throw DataError("image " + s.id + " differs in size from the rest of the dataset");
        }
        if (group_col >= 0) data.groups.push_back(cells[static_cast<std::size_t>(group_col)]);
        data.samples.push_back(std::move(s));
    }
    if (data.samples.empty()) throw DataError("dataset " + dir.string() + " has no samples");
    return data;
}

void save_checkpoint(const fs::path& manifest, Model& model, const RunConfig& config, const CheckpointInfo& info) {
    fs::path blob = manifest;
    blob.replace_extension(".bin");
    json tensors = json::array();
    std::vector<char> bytes;
    for (Parameter* p : model.parameters()) {
        const std::size_t offset = bytes.size();
        const std::size_t nbytes = static_cast<std::size_t>(p->value.size()) * sizeof(float);
        bytes.resize(offset + nbytes);
        std::memcpy(bytes.data() + offset, p->value.data(), nbytes);
        tensors.push_back({{"name", p->name},
                           {"shape", {p->value.rows(), p->value.cols()}},
                           {"offset", offset},
                           {"nbytes", nbytes}});
    }
    json config_json = json::object();
    for (const auto& [k, v] : to_config_map(config)) config_json[k] = v;
    json doc = {
        {"format", "ordiformer-checkpoint"},
        {"format_version", kCheckpointVersion},
        {"fold_index", info.fold_index},
        {"blob", blob.filename().string()},
        {"config", config_json},
        {"tensors", tensors},
        {"training",
         {{"best_epoch", info.best_epoch},
          {"best_score", info.best_score},
          {"epochs_run", info.epochs_run},
          {"early_stopped", info.early_stopped}}},
    };
    write_text(manifest, doc.dump(2) + "\n");
    write_text(blob, std::string(bytes.begin(), bytes.end()));
}

LoadedCheckpoint load_checkpoint(const fs::path& manifest) {
    json doc;
    try {
        doc = json::parse(read_text(manifest));
    } catch (const json::parse_error& e) {
        throw DataError("checkpoint " + manifest.string() + " is not valid JSON: " + e.what());
    }
    try {
        if (doc.value("format", "") != "ordiformer-checkpoint") throw DataError(manifest.string() + " is not a checkpoint");
        const int version = doc.at("format_version").get<int>();
        if (version != kCheckpointVersion) {
            throw DataError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
        }
        ConfigMap values;
        for (const auto& [k, v] : doc.at("config").items()) values[k] = v.get<std::string>();

        LoadedCheckpoint out;
        out.config = run_config_from_map(values);
        const auto& t = doc.at("training");
        out.info.fold_index = doc.at("fold_index").get<int>();
        out.info.best_epoch = t.at("best_epoch").get<int>();
        out.info.best_score = t.at("best_score").get<double>();
        out.info.epochs_run = t.at("epochs_run").get<int>();
        out.info.early_stopped = t.at("early_stopped").get<bool>();

        const std::string blob_text = read_text(manifest.parent_path() / doc.at("blob").get<std::string>());
        out.model = std::make_unique<Model>(out.config.train.model, 0);
        std::map<std::string, const json*> by_name;
        for (const auto& entry : doc.at("tensors")) by_name[entry.at("name").get<std::string>()] = &entry;
        if (by_name.size() != out.model->parameters().size()) {
            throw DataError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                            std::to_string(out.model->parameters().size()));
        }
        for (Parameter* p : out.model->parameters()) {
            auto it = by_name.find(p->name);
            if (it == by_name.end()) throw DataError("checkpoint is missing tensor " + p->name);
            const json& e = *it->second;
            const auto shape = e.at("shape").get<std::vector<long>>();
            if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols()) {
                throw DataError("tensor " + p->name + " has the wrong shape");
            }
            const auto offset = e.at("offset").get<std::size_t>();
            const auto nbytes = e.at("nbytes").get<std::size_t>();
            if (nbytes != static_cast<std::size_t>(p->value.size()) * sizeof(float) || offset + nbytes > blob_text.size()) {
                throw DataError("tensor " + p->name + " has an invalid byte range");
            }
            std::memcpy(p->value.data(), blob_text.data() + offset, nbytes);
            check_finite(p->value, "checkpoint tensor " + p->name);
        }
        return out;
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint " + manifest.string() + ": " + e.what());
    }
}

}  // namespace ordiformer
