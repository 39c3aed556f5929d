/** three.js scene graph for the studio: decimated cloud, capsule arm,
 * end-effector marker, hand cursor.  Pure scene-graph construction and
 * updates; no renderer required, so tests can assert on it headlessly. */

import {
  AmbientLight,
  BufferGeometry,
  CapsuleGeometry,
  Color,
  DirectionalLight,
  Float32BufferAttribute,
  Group,
  Matrix4,
  Mesh,
  MeshLambertMaterial,
  Points,
  PointsMaterial,
  Quaternion,
  SphereGeometry,
  Vector3,
} from "three";

import { flangePose, linkTransforms, poseToMatrix } from "./fk";
import { ArmJson, PoseJson } from "./protocol";

export const ARM_COLOR = 0x7f93a8;
export const RED_COLOR = 0xcc2222;
export const MARKER_COLOR = 0x27a0e6;

/** Local placement for a capsule spanning p0 -> p1 (geometry axis is +y). */
export function capsuleLocal(
  p0: [number, number, number],
  p1: [number, number, number],
): { position: Vector3; quaternion: Quaternion; length: number } {
  const a = new Vector3(...p0);
  const b = new Vector3(...p1);
  const axis = b.clone().sub(a);
  const length = axis.length();
  const quaternion =
    length > 1e-12
      ? new Quaternion().setFromUnitVectors(
          new Vector3(0, 1, 0),
          axis.normalize(),
        )
      : new Quaternion();
  return { position: a.clone().add(b).multiplyScalar(0.5), quaternion, length };
}

interface PlacedCapsule {
  mesh: Mesh;
  link: number; // 0-based group index; world frame is linkTransforms()[link + 1]
  local: Matrix4;
}

export class StudioScene {
  readonly root = new Group();
  readonly capsuleMeshes: Mesh[] = [];
  private readonly placed: PlacedCapsule[] = [];
  private readonly bodyMaterial: MeshLambertMaterial;
  private readonly tipMaterial: MeshLambertMaterial;
  private readonly markerMaterial: MeshLambertMaterial;
  private readonly eeMarker: Mesh;
  private readonly cursor: Group;
  readonly cloud: Points;

  constructor(
    private readonly arm: ArmJson,
    points: Array<[number, number, number]>,
  ) {
    this.bodyMaterial = new MeshLambertMaterial({
      color: ARM_COLOR,
      transparent: true,
    });
    this.tipMaterial = new MeshLambertMaterial({
      color: ARM_COLOR,
      transparent: true,
    });
    this.markerMaterial = new MeshLambertMaterial({ color: MARKER_COLOR });

    arm.collision_geometry.forEach((group, link) => {
      for (const capsule of group) {
        const { position, quaternion, length } = capsuleLocal(
          capsule.p0,
          capsule.p1,
        );
        const geometry =
          length > 1e-12
            ? new CapsuleGeometry(capsule.radius, length, 6, 12)
            : new SphereGeometry(capsule.radius, 12, 8);
        const mesh = new Mesh(
          geometry,
          link === arm.collision_geometry.length - 1
            ? this.tipMaterial
            : this.bodyMaterial,
        );
        mesh.matrixAutoUpdate = false;
        const local = new Matrix4().compose(
          position,
          quaternion,
          new Vector3(1, 1, 1),
        );
        this.placed.push({ mesh, link, local });
        this.capsuleMeshes.push(mesh);
        this.root.add(mesh);
      }
    });

    const geometry = new BufferGeometry();
    geometry.setAttribute(
      "position",
      new Float32BufferAttribute(points.flat(), 3),
    );
    this.cloud = new Points(
      geometry,
      new PointsMaterial({ color: 0x666666, size: 0.004 }),
    );
    this.root.add(this.cloud);

    this.eeMarker = new Mesh(new SphereGeometry(0.012, 12, 8), this.markerMaterial);
    this.root.add(this.eeMarker);

    this.cursor = new Group();
    const palm = new Mesh(
      new SphereGeometry(0.008, 10, 6),
      new MeshLambertMaterial({ color: 0xf0c040 }),
    );
    this.cursor.add(palm);
    this.root.add(this.cursor);

    this.root.add(new AmbientLight(0xffffff, 0.7));
    const sun = new DirectionalLight(0xffffff, 1.2);
    sun.position.set(1, -1, 2);
    this.root.add(sun);
  }

  /** Reposition every capsule from the joint vector and base pose. */
  updateRobot(q: number[], basePose?: PoseJson): void {
    const frames = linkTransforms(this.arm, q, basePose);
    for (const { mesh, link, local } of this.placed) {
      const frame = frames[link + 1];
      if (frame === undefined) continue;
      mesh.matrix.copy(frame).multiply(local);
    }
  }

  /** Place the end-effector marker at an exact server-reported pose. */
  setEEMarker(pose: PoseJson): void {
    this.eeMarker.position.set(...pose.position);
  }

  eeMarkerPosition(): Vector3 {
    return this.eeMarker.position.clone();
  }

  setCursor(position: Vector3, quaternion: Quaternion): void {
    this.cursor.position.copy(position);
    this.cursor.quaternion.copy(quaternion);
  }

  /** Infeasibility flag: the wrist link turns red. */
  setRed(red: boolean): void {
    this.tipMaterial.color = new Color(red ? RED_COLOR : ARM_COLOR);
  }

  tipColorHex(): number {
    return this.tipMaterial.color.getHex();
  }

  /** Ghost look while frozen: the arm goes translucent. */
  setGhost(ghost: boolean): void {
    const opacity = ghost ? 0.55 : 1.0;
    this.bodyMaterial.opacity = opacity;
    this.tipMaterial.opacity = opacity;
  }

  /** Convenience for callers holding only joint angles. */
  flange(q: number[], basePose?: PoseJson) {
    return flangePose(this.arm, q, basePose);
  }

  armBaseMatrix(basePose?: PoseJson): Matrix4 {
    return poseToMatrix(basePose ?? this.arm.base_pose);
  }
}
