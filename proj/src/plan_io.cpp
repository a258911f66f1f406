#include "dosegnn/plan_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dosegnn/error.hpp"

namespace dosegnn {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "raw volume I/O assumes a little-endian host");

namespace {

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_bytes(const fs::path& path, const char* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(data, static_cast<std::streamsize>(n));
    if (!out) throw DataError("write failed for " + path.string());
}

json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3) throw DataError(std::string(what) + " must be a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void write_f32(const fs::path& path, const std::vector<float>& values) {
    write_bytes(path, reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
    const std::string bytes = read_bytes(path);
    if (bytes.size() != expected_count * sizeof(float)) {
        throw DataError(path.string() + ": expected " + std::to_string(expected_count * sizeof(float)) +
                        " bytes, found " + std::to_string(bytes.size()));
    }
    std::vector<float> out(expected_count);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

void write_mask(const fs::path& path, const std::vector<std::uint8_t>& values) {
    write_bytes(path, reinterpret_cast<const char*>(values.data()), values.size());
}

std::vector<std::uint8_t> read_mask(const fs::path& path, std::size_t expected_count) {
    const std::string bytes = read_bytes(path);
    if (bytes.size() != expected_count) {
        throw DataError(path.string() + ": expected " + std::to_string(expected_count) + " mask bytes, found " +
                        std::to_string(bytes.size()));
    }
    std::vector<std::uint8_t> out(bytes.begin(), bytes.end());
    for (auto v : out) {
        if (v > 1) throw DataError(path.string() + ": mask bytes must be 0 or 1");
    }
    return out;
}

json geometry_to_json(const GridGeometry& g) {
    return {{"origin", vec_to_json(g.origin)},
            {"spacing", vec_to_json(g.spacing)},
            {"dims", json::array({g.dims.x, g.dims.y, g.dims.z})}};
}

GridGeometry geometry_from_json(const json& j) {
    GridGeometry g;
    try {
        g.origin = vec_from_json(j.at("origin"), "origin");
        g.spacing = vec_from_json(j.at("spacing"), "spacing");
        const auto& d = j.at("dims");
        if (!d.is_array() || d.size() != 3) throw DataError("dims must be a 3-element array");
        g.dims = {d[0].get<std::int64_t>(), d[1].get<std::int64_t>(), d[2].get<std::int64_t>()};
    } catch (const json::exception& e) {
        throw DataError(std::string("bad grid geometry: ") + e.what());
    }
    g.validate();
    return g;
}

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text.data(), text.size()); }

std::string read_text(const fs::path& path) { return read_bytes(path); }

void write_plan(const fs::path& dir, const PlanBundle& plan) {
    fs::create_directories(dir);
    json manifest;
    json ct = geometry_to_json(plan.ct.geometry());
    ct["file"] = "ct.f32";
    ct["unit"] = plan.ct.unit();
    manifest["ct"] = ct;
    write_f32(dir / "ct.f32", plan.ct.values());

    if (plan.dose_geometry) {
        json dose = geometry_to_json(*plan.dose_geometry);
        dose["unit"] = "Gy";
        if (plan.dose) {
            dose["file"] = "dose.f32";
            dose["unit"] = plan.dose->unit();
            write_f32(dir / "dose.f32", plan.dose->values());
        }
        manifest["dose"] = dose;
    }

    json structures = json::array();
    for (const auto& s : plan.structures) {
        const std::string file = s.name + ".mask";
        structures.push_back({{"name", s.name}, {"grid", to_string(s.grid)}, {"file", file}});
        write_mask(dir / file, s.values);
    }
    manifest["structures"] = structures;
    manifest["prescription_dose"] = plan.prescription_dose;
    write_text(dir / "plan.json", manifest.dump(2) + "\n");
}

PlanBundle read_plan(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("plan directory not found: " + dir.string());
    json manifest;
    try {
        manifest = json::parse(read_bytes(dir / "plan.json"));
    } catch (const json::exception& e) {
        throw DataError((dir / "plan.json").string() + ": " + e.what());
    }

    PlanBundle plan;
    plan.name = dir.filename().string();
    try {
        const auto& ct = manifest.at("ct");
        const GridGeometry ct_geom = geometry_from_json(ct);
        plan.ct = VoxelGrid(ct_geom, read_f32(dir / ct.at("file").get<std::string>(), ct_geom.voxel_count()),
                            ct.value("unit", "HU"));
        if (manifest.contains("dose") && !manifest["dose"].is_null()) {
            const auto& dose = manifest["dose"];
            plan.dose_geometry = geometry_from_json(dose);
            if (dose.contains("file")) {
                plan.dose = VoxelGrid(*plan.dose_geometry,
                                      read_f32(dir / dose["file"].get<std::string>(),
                                               plan.dose_geometry->voxel_count()),
                                      dose.value("unit", "Gy"));
            }
        }
        for (const auto& s : manifest.at("structures")) {
            StructureMask mask;
            mask.name = s.at("name").get<std::string>();
            mask.grid = mask_grid_from_string(s.at("grid").get<std::string>());
            const auto& geom = mask.grid == MaskGrid::Ct ? plan.ct.geometry() : plan.target_geometry();
            mask.values = read_mask(dir / s.at("file").get<std::string>(), geom.voxel_count());
            plan.structures.push_back(std::move(mask));
        }
        plan.prescription_dose = manifest.at("prescription_dose").get<double>();
    } catch (const json::exception& e) {
        throw DataError((dir / "plan.json").string() + ": " + e.what());
    }
    plan.validate();
    plan.update_ptv_center();
    return plan;
}

}  // namespace dosegnn
